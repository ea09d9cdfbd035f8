use serde::{Deserialize, Serialize};

use super::EngineError;

/// Per-session game parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GameConfig {
    pub words_per_game: u32,
    pub min_letters: u32,
    pub max_letters: u32,
    pub hidden_count: u32,
    pub capture_countdown_s: f64,
    pub answer_time_limit_s: f64,
    pub clue_reveal_remaining_s: f64,
    pub standard_stimuli_count: u32,
    /// Stimulus canvas for the standard setting, `[width, height]` in mm,
    /// centered on the board origin.
    pub canvas_mm: [f64; 2],
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            words_per_game: 2,
            min_letters: 5,
            max_letters: 6,
            hidden_count: 3,
            capture_countdown_s: 3.0,
            answer_time_limit_s: 60.0,
            clue_reveal_remaining_s: 30.0,
            standard_stimuli_count: 50,
            canvas_mm: [600.0, 300.0],
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let fail = |m: &str| Err(EngineError::Config(m.to_owned()));
        if self.words_per_game == 0 {
            return fail("words_per_game must be at least 1");
        }
        if self.min_letters > self.max_letters {
            return fail("min_letters exceeds max_letters");
        }
        if self.hidden_count == 0 || self.hidden_count >= self.min_letters {
            return fail("hidden_count must be in 1..min_letters");
        }
        if !(self.capture_countdown_s >= 0.0 && self.capture_countdown_s.is_finite()) {
            return fail("capture_countdown_s must be non-negative");
        }
        if !(self.answer_time_limit_s > 0.0 && self.answer_time_limit_s.is_finite()) {
            return fail("answer_time_limit_s must be positive");
        }
        if !(self.clue_reveal_remaining_s >= 0.0 && self.clue_reveal_remaining_s < self.answer_time_limit_s) {
            return fail("clue_reveal_remaining_s must be below answer_time_limit_s");
        }
        if self.standard_stimuli_count == 0 {
            return fail("standard_stimuli_count must be at least 1");
        }
        if !self.canvas_mm.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return fail("canvas_mm must be positive");
        }
        Ok(())
    }

    pub fn countdown_ms(&self) -> u64 {
        (self.capture_countdown_s * 1000.0).round() as u64
    }

    pub fn answer_limit_ms(&self) -> u64 {
        (self.answer_time_limit_s * 1000.0).round() as u64
    }

    pub fn clue_remaining_ms(&self) -> u64 {
        (self.clue_reveal_remaining_s * 1000.0).round() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        GameConfig::default().validate().unwrap();
    }

    #[test]
    fn invalid_configs_rejected() {
        let cases = [
            GameConfig { min_letters: 7, ..Default::default() },
            GameConfig { hidden_count: 5, ..Default::default() },
            GameConfig { clue_reveal_remaining_s: 60.0, ..Default::default() },
            GameConfig { words_per_game: 0, ..Default::default() },
        ];
        for c in cases {
            assert!(matches!(c.validate(), Err(EngineError::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let c: GameConfig = toml::from_str("hidden_count = 2\nwords_per_game = 4").unwrap();
        assert_eq!(c.hidden_count, 2);
        assert_eq!(c.words_per_game, 4);
        assert_eq!(c.min_letters, 5);
    }
}
