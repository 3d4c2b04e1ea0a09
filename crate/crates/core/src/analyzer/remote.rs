use super::{AnalysisRequest, AnalyzerBackend, BackendReply};
use crate::gateway::{ChatBackend, ChatMessage, GatewayError, GenerationParams};
use std::sync::Arc;

/// Sends the analyzer prompt to a language model through a chat backend.
pub struct RemoteLmAnalyzer {
    gateway: Arc<dyn ChatBackend>,
    params: GenerationParams,
}

impl RemoteLmAnalyzer {
    pub fn new(gateway: Arc<dyn ChatBackend>) -> Self {
        Self {
            gateway,
            params: GenerationParams {
                max_tokens: 64,
                ..GenerationParams::default()
            },
        }
    }
}

impl AnalyzerBackend for RemoteLmAnalyzer {
    fn id(&self) -> String {
        format!("remote-lm:{}", self.gateway.id())
    }

    fn respond(&self, request: &AnalysisRequest<'_>) -> Result<BackendReply, GatewayError> {
        let messages = [ChatMessage::system(request.system), ChatMessage::user(request.user)];
        let exchange = self.gateway.complete(&messages, &self.params)?;
        Ok(BackendReply {
            text: exchange.response_text.clone(),
            exchange: Some(exchange),
        })
    }
}
