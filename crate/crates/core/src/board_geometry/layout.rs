use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use super::GeometryError;
use crate::ids::LetterId;
use crate::{Vec2, Vec3};

/// Which side of the transparent board a player sits on.
///
/// The board frame is defined from the front side. A player on the back side
/// sees the printed grid mirrored: the same physical cell appears at `-x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoardSide {
    Front,
    Back,
}

impl BoardSide {
    pub fn opposite(self) -> Self {
        match self {
            BoardSide::Front => BoardSide::Back,
            BoardSide::Back => BoardSide::Front,
        }
    }

    fn x_sign(self) -> f64 {
        match self {
            BoardSide::Front => 1.0,
            BoardSide::Back => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LetterCell {
    pub id: LetterId,
    pub glyph: String,
    pub row: usize,
    pub col: usize,
    /// Cell center in the board frame (`z = 0`).
    pub position_mm: Vec3,
}

/// The letter grid printed on the board.
#[derive(Debug, Clone, PartialEq)]
pub struct BoardLayout {
    glyph_set_id: String,
    rows: usize,
    cols: usize,
    pitch_mm: f64,
    cells: Vec<LetterCell>,
    by_id: HashMap<LetterId, usize>,
    by_glyph: HashMap<String, usize>,
}

/// On-disk representation: key/value header plus a whitespace separated cell
/// table, one board row per line, `.` for an empty cell.
#[derive(Debug, Serialize, Deserialize)]
struct LayoutFile {
    glyph_set_id: String,
    rows: usize,
    cols: usize,
    pitch_mm: f64,
    grid: String,
}

const GOJUON: [&str; 5] = [
    "あ か さ た な は ま や ら わ",
    "い き し ち に ひ み . り .",
    "う く す つ ぬ ふ む ゆ る ん",
    "え け せ て ね へ め . れ .",
    "お こ そ と の ほ も よ ろ を",
];

impl BoardLayout {
    /// Builds a layout from a row-major grid of optional glyphs.
    pub fn from_grid(
        glyph_set_id: impl Into<String>,
        pitch_mm: f64,
        grid: &[Vec<Option<String>>],
    ) -> Result<Self, GeometryError> {
        let rows = grid.len();
        let cols = grid.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(GeometryError::InvalidLayout("empty grid".into()));
        }
        if !(pitch_mm.is_finite() && pitch_mm > 0.0) {
            return Err(GeometryError::InvalidLayout(format!("pitch_mm must be positive, got {pitch_mm}")));
        }
        let mut cells = Vec::new();
        let mut by_id = HashMap::new();
        let mut by_glyph = HashMap::new();
        for (row, line) in grid.iter().enumerate() {
            if line.len() != cols {
                return Err(GeometryError::InvalidLayout(format!(
                    "row {row} has {} cells, expected {cols}",
                    line.len()
                )));
            }
            for (col, glyph) in line.iter().enumerate() {
                let Some(glyph) = glyph else { continue };
                let glyph: String = glyph.nfc().collect();
                if glyph.is_empty() {
                    continue;
                }
                let idx = cells.len();
                if by_glyph.insert(glyph.clone(), idx).is_some() {
                    return Err(GeometryError::InvalidLayout(format!("glyph `{glyph}` appears twice")));
                }
                let id = LetterId(format!("r{row}c{col}"));
                by_id.insert(id.clone(), idx);
                cells.push(LetterCell {
                    id,
                    glyph,
                    row,
                    col,
                    position_mm: cell_center(row, col, rows, cols, pitch_mm),
                });
            }
        }
        Ok(Self {
            glyph_set_id: glyph_set_id.into(),
            rows,
            cols,
            pitch_mm,
            cells,
            by_id,
            by_glyph,
        })
    }

    /// Hiragana gojūon on a 5×10 grid at 60 mm pitch.
    pub fn gojuon() -> Self {
        Self::parse_grid("hiragana-gojuon", 5, 10, 60.0, &GOJUON.join("\n"))
            .expect("built-in layout is valid")
    }

    fn parse_grid(
        glyph_set_id: &str,
        rows: usize,
        cols: usize,
        pitch_mm: f64,
        text: &str,
    ) -> Result<Self, GeometryError> {
        let grid: Vec<Vec<Option<String>>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split_whitespace()
                    .map(|g| if g == "." { None } else { Some(g.to_owned()) })
                    .collect()
            })
            .collect();
        if grid.len() != rows {
            return Err(GeometryError::InvalidLayout(format!(
                "grid has {} rows, header says {rows}",
                grid.len()
            )));
        }
        if grid.iter().any(|r| r.len() != cols) {
            return Err(GeometryError::InvalidLayout(format!("every grid row must have {cols} cells")));
        }
        Self::from_grid(glyph_set_id, pitch_mm, &grid)
    }

    /// Parses the human-editable layout file.
    pub fn from_toml_str(text: &str) -> Result<Self, GeometryError> {
        let file: LayoutFile = toml::from_str(text).map_err(|e| GeometryError::Parse(e.to_string()))?;
        Self::parse_grid(&file.glyph_set_id, file.rows, file.cols, file.pitch_mm, &file.grid)
    }

    pub fn to_toml_string(&self) -> String {
        let mut grid = String::new();
        for row in 0..self.rows {
            let line: Vec<&str> = (0..self.cols)
                .map(|col| {
                    self.by_id
                        .get(&LetterId(format!("r{row}c{col}")))
                        .map_or(".", |&i| self.cells[i].glyph.as_str())
                })
                .collect();
            grid.push_str(&line.join(" "));
            grid.push('\n');
        }
        let file = LayoutFile {
            glyph_set_id: self.glyph_set_id.clone(),
            rows: self.rows,
            cols: self.cols,
            pitch_mm: self.pitch_mm,
            grid,
        };
        toml::to_string(&file).expect("layout serializes")
    }

    /// SHA-256 of the canonical layout file, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn glyph_set_id(&self) -> &str {
        &self.glyph_set_id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pitch_mm(&self) -> f64 {
        self.pitch_mm
    }

    pub fn cells(&self) -> &[LetterCell] {
        &self.cells
    }

    /// Width and height of the printed grid in millimeters.
    pub fn extent_mm(&self) -> (f64, f64) {
        (self.cols as f64 * self.pitch_mm, self.rows as f64 * self.pitch_mm)
    }

    pub fn cell(&self, id: &LetterId) -> Option<&LetterCell> {
        self.by_id.get(id).map(|&i| &self.cells[i])
    }

    pub fn cell_by_glyph(&self, glyph: &str) -> Option<&LetterCell> {
        let glyph: String = glyph.nfc().collect();
        self.by_glyph.get(&glyph).map(|&i| &self.cells[i])
    }

    pub fn contains_glyph(&self, glyph: &str) -> bool {
        self.cell_by_glyph(glyph).is_some()
    }

    /// Board-frame position of a letter cell.
    pub fn letter_position(&self, id: &LetterId) -> Result<Vec3, GeometryError> {
        self.cell(id)
            .map(|c| c.position_mm)
            .ok_or_else(|| GeometryError::NotFound(id.to_string()))
    }

    /// Board-frame position of a glyph as named by the player on `side`.
    ///
    /// Both sides resolve to the same physical point.
    pub fn glyph_position(&self, glyph: &str, side: BoardSide) -> Result<Vec3, GeometryError> {
        let cell = self
            .cell_by_glyph(glyph)
            .ok_or_else(|| GeometryError::NotFound(glyph.to_owned()))?;
        let seen = self.view_position(cell, side);
        Ok(Self::view_to_board(side, seen))
    }

    /// Where the cell appears in the coordinate frame of the player on `side`.
    pub fn view_position(&self, cell: &LetterCell, side: BoardSide) -> Vec3 {
        let p = cell.position_mm;
        Vec3::new(side.x_sign() * p.x, p.y, 0.0)
    }

    /// Converts a point in a player's view frame back to the board frame.
    pub fn view_to_board(side: BoardSide, p: Vec3) -> Vec3 {
        Vec3::new(side.x_sign() * p.x, p.y, p.z)
    }

    /// Lifts a 2D board point into the board plane.
    pub fn lift(p: Vec2) -> Vec3 {
        Vec3::new(p.x, p.y, 0.0)
    }
}

fn cell_center(row: usize, col: usize, rows: usize, cols: usize, pitch: f64) -> Vec3 {
    Vec3::new(
        (col as f64 - (cols as f64 - 1.0) / 2.0) * pitch,
        (row as f64 - (rows as f64 - 1.0) / 2.0) * pitch,
        0.0,
    )
}
