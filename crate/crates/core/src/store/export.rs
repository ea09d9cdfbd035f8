//! Training exports and their import.
//!
//! An export directory holds `manifest.json`, `labels.csv`, `layout.toml`
//! and `images/`. Sample image paths in the manifest are relative to the
//! export directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{write_png, Participant, SessionSink, SessionStatus, Store, StoreError, StoreOptions};
use crate::board_geometry::BoardLayout;
use crate::capture::GazeSample;
use crate::ids::{Mode, ParticipantId, SessionId};
use crate::normalization::NormalizationParams;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EyetrackerFilter {
    /// Drop samples of eye-tracker wearers (headset visible in the image).
    #[default]
    Exclude,
    Only,
    All,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportFilter {
    pub eyetracker: EyetrackerFilter,
    pub mode: Option<Mode>,
    /// Restrict to these participants (e.g. one fold).
    pub participants: Option<BTreeSet<ParticipantId>>,
}

impl ExportFilter {
    pub fn all() -> Self {
        Self { eyetracker: EyetrackerFilter::All, ..Default::default() }
    }

    pub fn eyetracker_only() -> Self {
        Self { eyetracker: EyetrackerFilter::Only, ..Default::default() }
    }

    fn accepts(&self, s: &GazeSample) -> bool {
        let et = match self.eyetracker {
            EyetrackerFilter::Exclude => !s.wearing_eyetracker,
            EyetrackerFilter::Only => s.wearing_eyetracker,
            EyetrackerFilter::All => true,
        };
        et && self.mode.is_none_or(|m| m == s.mode)
            && self.participants.as_ref().is_none_or(|p| p.contains(&s.participant_id))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParticipantEntry {
    pub participant_id: ParticipantId,
    pub wearing_eyetracker: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub dataset_id: String,
    pub created_at_ms: u64,
    pub layout_hash: String,
    pub normalization: NormalizationParams,
    pub participants: Vec<ParticipantEntry>,
    pub samples: Vec<GazeSample>,
}

impl DatasetManifest {
    pub fn eyetracker_sample_count(&self) -> usize {
        self.samples.iter().filter(|s| s.wearing_eyetracker).count()
    }
}

fn export_image_path(file: &str) -> String {
    let name = Path::new(file).file_name().and_then(|n| n.to_str()).unwrap_or(file);
    format!("images/{name}")
}

/// Exports matching samples of completed and abandoned sessions alike.
/// Participants flagged `exclude_from_dataset` are always left out.
pub fn export_dataset(
    store: &Store,
    filter: &ExportFilter,
    out_dir: &Path,
    dataset_id: &str,
    created_at_ms: u64,
) -> Result<DatasetManifest, StoreError> {
    let participants: BTreeMap<ParticipantId, Participant> =
        store.participants().into_iter().map(|p| (p.participant_id.clone(), p)).collect();
    let included = |s: &GazeSample| participants.get(&s.participant_id).is_some_and(|p| !p.exclude_from_dataset);
    let selected: Vec<GazeSample> =
        store.all_samples()?.into_iter().filter(|s| included(s) && filter.accepts(s)).collect();
    if selected.is_empty() {
        return Err(StoreError::EmptyExport);
    }
    std::fs::create_dir_all(out_dir.join("images")).map_err(|e| StoreError::io(out_dir, e))?;
    let mut samples = Vec::with_capacity(selected.len());
    for s in selected {
        let mut out = s.clone();
        out.image_path = export_image_path(&s.image_path);
        out.normalized_image_path = export_image_path(&s.normalized_image_path);
        for (from, to) in [(&s.image_path, &out.image_path), (&s.normalized_image_path, &out.normalized_image_path)] {
            let src = store.resolve(&s.session_id, from);
            let dst = out_dir.join(to);
            std::fs::copy(&src, &dst).map_err(|e| StoreError::io(&src, e))?;
        }
        samples.push(out);
    }
    let mut entries: Vec<ParticipantEntry> = samples
        .iter()
        .map(|s| ParticipantEntry { participant_id: s.participant_id.clone(), wearing_eyetracker: s.wearing_eyetracker })
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    entries.dedup_by(|a, b| a.participant_id == b.participant_id);
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        dataset_id: dataset_id.to_owned(),
        created_at_ms,
        layout_hash: store.layout_hash().to_owned(),
        normalization: *store.normalization(),
        participants: entries,
        samples,
    };
    let write = |name: &str, bytes: &[u8]| {
        let p = out_dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| StoreError::io(&p, e))
    };
    write("manifest.json", (serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n").as_bytes())?;
    write("labels.csv", labels_csv(&manifest.samples).as_bytes())?;
    write("layout.toml", store.layout().to_toml_string().as_bytes())?;
    Ok(manifest)
}

fn labels_csv(samples: &[GazeSample]) -> String {
    let mut s = String::from(
        "sample_id,session_id,participant_id,mode,letter_id,stimulus_x_mm,stimulus_y_mm,label_pitch_rad,label_yaw_rad,\
         label_x,label_y,label_z,wearing_eyetracker,image_path,normalized_image_path,captured_at_ms,approved_at_ms\n",
    );
    for r in samples {
        let (sx, sy) = r.stimulus_xy_mm.map_or((String::new(), String::new()), |[x, y]| (x.to_string(), y.to_string()));
        let [lx, ly, lz] = r.label_vec_xyz;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.sample_id,
            r.session_id,
            r.participant_id,
            r.mode,
            r.letter_id.as_ref().map(|l| l.as_str()).unwrap_or(""),
            sx,
            sy,
            r.label_pitch_rad,
            r.label_yaw_rad,
            lx,
            ly,
            lz,
            r.wearing_eyetracker,
            r.image_path,
            r.normalized_image_path,
            r.captured_at_ms,
            r.approved_at_ms.map(|t| t.to_string()).unwrap_or_default(),
        );
    }
    s
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, StoreError> {
    let p = dir.join("manifest.json");
    let text = std::fs::read_to_string(&p).map_err(|e| StoreError::io(&p, e))?;
    let m: DatasetManifest = serde_json::from_str(&text).map_err(|e| StoreError::Format(format!("{}: {e}", p.display())))?;
    if m.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(StoreError::Format(format!("unsupported manifest schema {}", m.schema_version)));
    }
    Ok(m)
}

/// Loads an export into a (new or compatible) store. Sessions are rebuilt
/// from the samples alone; they carry no event log.
pub fn import_dataset(export_dir: &Path, store_root: &Path, options: StoreOptions) -> Result<Store, StoreError> {
    let manifest = read_manifest(export_dir)?;
    let layout_path = export_dir.join("layout.toml");
    let layout_text = std::fs::read_to_string(&layout_path).map_err(|e| StoreError::io(&layout_path, e))?;
    let layout = BoardLayout::from_toml_str(&layout_text).map_err(|e| StoreError::Format(e.to_string()))?;
    if layout.content_hash() != manifest.layout_hash {
        return Err(StoreError::Format("export layout.toml does not match the manifest".into()));
    }
    let store = Store::create(store_root, &layout, &manifest.normalization, options)?;
    for p in &manifest.participants {
        if store.participant(&p.participant_id).is_none() {
            store.upsert_participant(Participant {
                participant_id: p.participant_id.clone(),
                wearing_eyetracker: p.wearing_eyetracker,
                exclude_from_dataset: false,
                registered_at_ms: manifest.created_at_ms,
            })?;
        }
    }
    let mut by_session: BTreeMap<SessionId, Vec<&GazeSample>> = BTreeMap::new();
    for s in &manifest.samples {
        by_session.entry(s.session_id.clone()).or_default().push(s);
    }
    for (session, samples) in by_session {
        let participants: Vec<ParticipantId> =
            samples.iter().map(|s| s.participant_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let mut writer = match store.session(&session) {
            Some(_) => store.resume_session(&session)?,
            None => store.open_session(&session, samples[0].mode, &participants, manifest.created_at_ms)?,
        };
        for s in samples {
            let (img, norm) = crate::capture::image_paths(&s.sample_id);
            let mut stored = s.clone();
            for (from, to) in [(&s.image_path, &img), (&s.normalized_image_path, &norm)] {
                let src = export_dir.join(from);
                let image = image::open(&src).map_err(|e| StoreError::Format(format!("{}: {e}", src.display())))?;
                write_png(&writer.dir().join(to), &image.to_luma8())?;
            }
            stored.image_path = img;
            stored.normalized_image_path = norm;
            writer.append_sample(&stored)?;
        }
        writer.finish(SessionStatus::Completed, manifest.created_at_ms)?;
    }
    Ok(store)
}
