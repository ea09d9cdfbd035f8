use super::{EngineError, EventKind, GameConfig, GameSession, SessionEvent};

/// Rebuilds a session by folding its event log through the validating
/// reducer. The log's `game_started` config must equal `config`.
pub fn replay(log: &[SessionEvent], config: &GameConfig) -> Result<GameSession, EngineError> {
    let mut session = GameSession::idle(config.clone());
    for (index, event) in log.iter().enumerate() {
        if let EventKind::GameStarted { config: logged, .. } = &event.kind {
            if logged != config {
                return Err(EngineError::Replay {
                    index,
                    source: Box::new(EngineError::Config("logged config differs from the supplied config".into())),
                });
            }
        }
        session
            .apply(event.clone())
            .map_err(|e| EngineError::Replay { index, source: Box::new(e) })?;
    }
    Ok(session)
}
