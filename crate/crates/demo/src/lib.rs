//! WebAssembly bindings for `www/index.html`.
//!
//! Every export returns a JSON string; errors come back as `{"error": ...}`.

use gazeboard_core::board_geometry::{gaze_label, vector_to_pitchyaw, BoardLayout, BoardSide, Calibration};
use gazeboard_core::dictionary::{select_question, Dictionary};
use gazeboard_core::engine::GameConfig;
use gazeboard_core::eval::mann_whitney_u;
use gazeboard_core::eval::stats::summarize;
use gazeboard_core::ids::LetterId;
use gazeboard_core::{seed, Vec3};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Default seated head position of the front player, board frame.
const FACE_MM: [f64; 3] = [0.0, -120.0, 500.0];

fn to_text(result: Result<Value, String>) -> String {
    result.unwrap_or_else(|e| json!({ "error": e })).to_string()
}

pub fn board_value() -> Value {
    let layout = BoardLayout::gojuon();
    let (w, h) = layout.extent_mm();
    let cells: Vec<Value> = layout
        .cells()
        .iter()
        .map(|c| json!({ "id": c.id, "glyph": c.glyph, "row": c.row, "col": c.col, "x": c.position_mm.x, "y": c.position_mm.y }))
        .collect();
    json!({ "rows": layout.rows(), "cols": layout.cols(), "pitch_mm": layout.pitch_mm(), "width_mm": w, "height_mm": h, "cells": cells })
}

/// Gaze label of the front player looking at `letter_id`, with the head
/// moved by `offset_mm` from the default seat.
pub fn label_value(letter_id: &str, offset_mm: [f64; 3]) -> Result<Value, String> {
    let layout = BoardLayout::gojuon();
    let calibration = Calibration::default_installation();
    let camera = calibration.for_side(BoardSide::Front).ok_or("no front camera")?;
    let target = layout.letter_position(&LetterId::new(letter_id)).map_err(|e| e.to_string())?;
    let face = Vec3::new(FACE_MM[0] + offset_mm[0], FACE_MM[1] + offset_mm[1], FACE_MM[2] + offset_mm[2]);
    let eye_cam = camera.extrinsics.transform(&face);
    let g = gaze_label(&camera.extrinsics, &eye_cam, &target).map_err(|e| e.to_string())?;
    let (pitch, yaw) = vector_to_pitchyaw(&g);
    Ok(json!({
        "letter_id": letter_id,
        "target_mm": [target.x, target.y],
        "face_mm": [face.x, face.y, face.z],
        "face_camera_mm": [eye_cam.x, eye_cam.y, eye_cam.z],
        "gaze": [g.x, g.y, g.z],
        "pitch_deg": pitch.to_degrees(),
        "yaw_deg": yaw.to_degrees(),
    }))
}

/// A question word as the questioner and the answerer see it.
pub fn question_value(seed_value: u64) -> Result<Value, String> {
    let layout = BoardLayout::gojuon();
    let config = GameConfig::default();
    let mut rng = seed::rng(seed::derive(seed_value, "demo-question", 0));
    let q = select_question(&Dictionary::builtin(), &layout, &config, &mut rng).map_err(|e| e.to_string())?;
    let glyphs = &q.entry.glyphs;
    let answerer: Vec<&str> = glyphs.iter().zip(&q.hidden_mask).map(|(g, &h)| if h { "＿" } else { g.as_str() }).collect();
    let letter_ids: Vec<Option<LetterId>> =
        q.hidden_positions().iter().map(|&i| layout.cell_by_glyph(&glyphs[i]).map(|c| c.id.clone())).collect();
    Ok(json!({
        "word": q.word(),
        "glyphs": glyphs,
        "hidden_positions": q.hidden_positions(),
        "hidden_letter_ids": letter_ids,
        "clue_index": q.first_letter_clue_index,
        "answerer_view": answerer,
    }))
}

pub fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("not a number: {t}")))
        .collect()
}

/// Two-sided Mann-Whitney U test between two lists of angular errors.
pub fn compare_value(a: &str, b: &str) -> Result<Value, String> {
    let (x, y) = (parse_numbers(a)?, parse_numbers(b)?);
    let mw = mann_whitney_u(&x, &y).map_err(|e| e.to_string())?;
    let (sx, sy) = (summarize(&x).map_err(|e| e.to_string())?, summarize(&y).map_err(|e| e.to_string())?);
    Ok(json!({
        "u": mw.u,
        "p": mw.p_two_sided,
        "method": format!("{:?}", mw.method),
        "mean_a": sx.mean,
        "mean_b": sy.mean,
        "n_a": x.len(),
        "n_b": y.len(),
    }))
}

#[wasm_bindgen]
pub fn board() -> String {
    board_value().to_string()
}

#[wasm_bindgen]
pub fn label(letter_id: &str, dx: f64, dy: f64, dz: f64) -> String {
    to_text(label_value(letter_id, [dx, dy, dz]))
}

#[wasm_bindgen]
pub fn question(seed_value: u32) -> String {
    to_text(question_value(u64::from(seed_value)))
}

#[wasm_bindgen]
pub fn compare(a: &str, b: &str) -> String {
    to_text(compare_value(a, b))
}
