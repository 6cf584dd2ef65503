//! Round lifecycle of one interactive session and its on-disk form.
//!
//! `created → (submit* → commit → propagate)+`, after which the session is
//! idle until the next submission. Each transition checks the lifecycle
//! first, so illegal calls fail the same way every time.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::afi::{afi_masks, AfiInput};
use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::eval::metrics::{score_video, ObjectScore};
use crate::io;
use crate::ledger::{elapsed_ms, OpLedger};
use crate::propagation::{propagate_round, update_memory, MemoryEntry, ProgressEvent, RoundInput, RoundMemory, Stage};
use crate::video::{rasterize_strokes, Frame, IdMask, RoundRecord, ScribbleDoc, ScribbleStroke, SessionState, StageTimes};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    Created,
    /// Scribbles submitted for the current round, not yet committed.
    Interacting,
    /// Interaction masks computed and memory updated; awaiting propagation.
    Committed,
    Propagating,
    Idle,
}

#[derive(Debug, Clone)]
struct Committed {
    record: RoundRecord,
    memory: RoundMemory,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub state: SessionState,
    config: EngineConfig,
    memory: RoundMemory,
    lifecycle: Lifecycle,
    pending: BTreeMap<usize, Vec<ScribbleStroke>>,
    committed: Option<Committed>,
    ledger: OpLedger,
    gt: Option<Vec<IdMask>>,
}

impl Session {
    pub fn new(video: Vec<Frame>, num_objects: usize, config: EngineConfig) -> Result<Self> {
        config.validate()?;
        let state = SessionState::new(video, num_objects, config.capacity)?;
        Ok(Session {
            state,
            memory: RoundMemory::empty(num_objects),
            config,
            lifecycle: Lifecycle::Created,
            pending: BTreeMap::new(),
            committed: None,
            ledger: OpLedger::new(),
            gt: None,
        })
    }

    pub fn with_ground_truth(mut self, gt: Vec<IdMask>) -> Result<Self> {
        let (h, w) = self.state.extents();
        if gt.len() != self.state.num_frames() || gt.iter().any(|m| m.height != h || m.width != w) {
            return Err(Error::invalid("ground truth does not match the video"));
        }
        for m in &gt {
            m.check_capacity(self.state.num_objects)?;
        }
        self.gt = Some(gt);
        Ok(self)
    }

    pub fn lifecycle(&self) -> Lifecycle {
        self.lifecycle
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn memory(&self) -> &RoundMemory {
        &self.memory
    }

    pub fn ledger(&self) -> &OpLedger {
        &self.ledger
    }

    pub fn ground_truth(&self) -> Option<&[IdMask]> {
        self.gt.as_deref()
    }

    pub fn current_round(&self) -> usize {
        self.state.current_round
    }

    /// Frames with staged strokes for the open round.
    pub fn pending_frames(&self) -> Vec<usize> {
        self.pending.keys().copied().collect()
    }

    /// Masks of `round` (the latest complete round when `None`).
    pub fn masks(&self, round: Option<usize>) -> Option<&[IdMask]> {
        match round {
            None => self.state.latest_masks(),
            Some(r) => self.state.round(r).map(|rec| rec.masks.as_slice()),
        }
    }

    /// Stages strokes for round `round`; a later submission in the same
    /// round replaces the earlier one. Returns the accepted frame set.
    pub fn submit_scribbles(&mut self, round: usize, docs: &[ScribbleDoc]) -> Result<Vec<usize>> {
        if round != self.state.current_round {
            return Err(Error::Conflict(format!(
                "round {round} is not the open round {}",
                self.state.current_round
            )));
        }
        match self.lifecycle {
            Lifecycle::Created | Lifecycle::Interacting | Lifecycle::Idle => {}
            Lifecycle::Committed | Lifecycle::Propagating => {
                return Err(Error::Conflict(format!("round {round} is already committed")));
            }
        }
        let (h, w) = self.state.extents();
        let mut staged: BTreeMap<usize, Vec<ScribbleStroke>> = BTreeMap::new();
        for doc in docs {
            if doc.frame >= self.state.num_frames() {
                return Err(Error::invalid(format!("frame {} out of range", doc.frame)));
            }
            for s in &doc.strokes {
                if s.object_id as usize > self.state.num_objects {
                    return Err(Error::invalid(format!(
                        "object id {} exceeds the session's {} objects",
                        s.object_id, self.state.num_objects
                    )));
                }
            }
            rasterize_strokes(&doc.strokes, h, w, doc.frame, round)?;
            if !doc.strokes.is_empty() {
                if staged.contains_key(&doc.frame) {
                    return Err(Error::invalid(format!("frame {} submitted twice", doc.frame)));
                }
                staged.insert(doc.frame, doc.strokes.clone());
            }
        }
        if staged.is_empty() {
            return Err(Error::invalid("submission has no strokes"));
        }
        self.pending = staged;
        self.lifecycle = Lifecycle::Interacting;
        Ok(self.pending_frames())
    }

    /// Runs the interaction stage on the staged frames and folds them into
    /// the across-round memory.
    pub fn commit(&mut self, on_event: &mut dyn FnMut(ProgressEvent)) -> Result<BTreeMap<usize, IdMask>> {
        match self.lifecycle {
            Lifecycle::Interacting => {}
            Lifecycle::Committed | Lifecycle::Propagating => {
                return Err(Error::Conflict("round already committed".into()));
            }
            Lifecycle::Created | Lifecycle::Idle => {
                return Err(Error::Precondition("no scribbles submitted for this round".into()));
            }
        }
        let round = self.state.current_round;
        let (h, w) = self.state.extents();
        let t0 = Instant::now();
        let mut scribbles = BTreeMap::new();
        for (&t, strokes) in &self.pending {
            scribbles.insert(t, rasterize_strokes(strokes, h, w, t, round)?);
        }
        let prev = self.state.latest_masks();
        let inputs: Vec<AfiInput<'_>> = scribbles
            .iter()
            .map(|(&t, s)| AfiInput {
                frame: &self.state.video[t],
                scribble: s,
                prev_mask: prev.map(|m| &m[t]),
            })
            .collect();
        let mut ledger = OpLedger::new();
        let masks = afi_masks(&inputs, self.state.num_objects, round, &self.config, &mut ledger)?;
        let afi: BTreeMap<usize, IdMask> = masks.into_iter().map(|m| (m.frame, m)).collect();
        let memory = self.memory_with(&afi, round)?;
        let interaction_ms = elapsed_ms(t0);
        for &t in afi.keys() {
            on_event(ProgressEvent {
                stage: Stage::Interaction,
                frame: t,
                round,
                wall_ms: interaction_ms,
            });
        }
        self.ledger.merge(&ledger);
        self.committed = Some(Committed {
            record: RoundRecord {
                round,
                interacted: afi.keys().copied().collect(),
                strokes: std::mem::take(&mut self.pending),
                scribbles,
                afi_masks: afi.clone(),
                masks: Vec::new(),
                wall_ms: StageTimes {
                    interaction_ms,
                    ..StageTimes::default()
                },
            },
            memory,
        });
        self.lifecycle = Lifecycle::Committed;
        Ok(afi)
    }

    fn memory_with(&self, afi: &BTreeMap<usize, IdMask>, round: usize) -> Result<RoundMemory> {
        encode_round(&self.state.video, &self.memory, afi, round, self.state.num_objects, &self.config)
    }

    /// Propagates the committed round to every frame. The round record is
    /// stored only when the whole pass succeeds.
    pub fn propagate(&mut self, on_event: &mut dyn FnMut(ProgressEvent)) -> Result<&RoundRecord> {
        if self.lifecycle != Lifecycle::Committed {
            return Err(Error::Precondition("round has not been committed".into()));
        }
        let Committed { mut record, memory } = self.committed.take().expect("committed round");
        self.lifecycle = Lifecycle::Propagating;
        let mut ledger = OpLedger::new();
        let input = RoundInput {
            video: &self.state.video,
            interacted: &record.interacted,
            afi_masks: &record.afi_masks,
            memory: &memory,
            round: record.round,
        };
        let outcome = match propagate_round(&input, &self.config, &mut ledger, on_event) {
            Ok(o) => o,
            Err(e) => {
                self.committed = Some(Committed { record, memory });
                self.lifecycle = Lifecycle::Committed;
                return Err(e);
            }
        };
        record.masks = outcome.masks;
        record.wall_ms.propagation_ms = outcome.propagation_ms;
        record.wall_ms.repropagation_ms = outcome.repropagation_ms;
        self.ledger.merge(&ledger);
        self.memory = memory;
        self.state.rounds.push(record);
        self.state.current_round += 1;
        self.lifecycle = Lifecycle::Idle;
        Ok(self.state.rounds.last().expect("just pushed"))
    }

    /// Recomputes round `round` from its stored interaction masks and the
    /// memory as it stood then. Used to check reproducibility.
    pub fn replay_round(&self, round: usize) -> Result<Vec<IdMask>> {
        let mut memory = RoundMemory::empty(self.state.num_objects);
        for rec in &self.state.rounds {
            memory = encode_round(
                &self.state.video,
                &memory,
                &rec.afi_masks,
                rec.round,
                self.state.num_objects,
                &self.config,
            )?;
            if rec.round == round {
                let input = RoundInput {
                    video: &self.state.video,
                    interacted: &rec.interacted,
                    afi_masks: &rec.afi_masks,
                    memory: &memory,
                    round,
                };
                return Ok(propagate_round(&input, &self.config, &mut OpLedger::new(), &mut |_| {})?.masks);
            }
        }
        Err(Error::invalid(format!("round {round} has not been propagated")))
    }

    /// Per-object J and F of every completed round, when ground truth is
    /// attached.
    pub fn metrics(&self) -> Result<Vec<RoundScores>> {
        let gt = self
            .gt
            .as_ref()
            .ok_or_else(|| Error::Precondition("session has no ground truth".into()))?;
        self.state
            .rounds
            .iter()
            .map(|rec| {
                Ok(RoundScores {
                    round: rec.round,
                    interacted: rec.interacted.clone(),
                    scores: score_video(&rec.masks, gt, self.state.num_objects)?,
                    wall_ms: rec.wall_ms.clone(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundScores {
    pub round: usize,
    pub interacted: Vec<usize>,
    /// `scores[t][k-1]` for frame `t`, object `k`.
    pub scores: Vec<Vec<ObjectScore>>,
    pub wall_ms: StageTimes,
}

fn encode_round(
    video: &[Frame],
    prev: &RoundMemory,
    afi: &BTreeMap<usize, IdMask>,
    round: usize,
    num_objects: usize,
    cfg: &EngineConfig,
) -> Result<RoundMemory> {
    let entries = afi
        .iter()
        .map(|(&t, m)| MemoryEntry::encode(&video[t], m, round, num_objects, cfg))
        .collect::<Result<Vec<_>>>()?;
    update_memory(prev, round, entries, cfg.memory_cap)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RoundManifest {
    round: usize,
    interacted: Vec<usize>,
    wall_ms: StageTimes,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    num_frames: usize,
    height: usize,
    width: usize,
    num_objects: usize,
    config: EngineConfig,
    current_round: usize,
    rounds: Vec<RoundManifest>,
    ledger: OpLedger,
    has_ground_truth: bool,
    /// Frames that do not survive 8-bit PNG are also kept as raw floats.
    raw_frames: bool,
}

fn round_dir(dir: &Path, round: usize) -> std::path::PathBuf {
    dir.join("rounds").join(format!("{round:04}"))
}

fn write_f32s(path: &Path, frames: &[Frame]) -> Result<()> {
    let bytes: Vec<u8> = frames.iter().flat_map(|f| f.rgb.iter().flat_map(|v| v.to_le_bytes())).collect();
    std::fs::write(path, bytes)?;
    Ok(())
}

fn read_f32s(path: &Path, count: usize, height: usize, width: usize) -> Result<Vec<Frame>> {
    let bytes = std::fs::read(path)?;
    let per = height * width * 3;
    if bytes.len() != count * per * 4 {
        return Err(Error::Format("raw frame file has the wrong size".into()));
    }
    let vals: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    vals.chunks(per)
        .enumerate()
        .map(|(t, rgb)| Frame::new(t, height, width, rgb.to_vec()))
        .collect()
}

fn png_lossless(frame: &Frame) -> bool {
    frame
        .rgb
        .iter()
        .all(|&v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8) as f32 / 255.0 == v)
}

impl Session {
    /// Writes `manifest.json`, frames, per-round scribble JSON and masks.
    pub fn save(&self, dir: &Path) -> Result<()> {
        if !matches!(self.lifecycle, Lifecycle::Idle | Lifecycle::Created) {
            return Err(Error::Precondition("only idle sessions can be saved".into()));
        }
        let (h, w) = self.state.extents();
        std::fs::create_dir_all(dir.join("frames"))?;
        for f in &self.state.video {
            io::write_frame(&dir.join("frames").join(io::frame_file_name(f.index)), f)?;
        }
        let raw_frames = !self.state.video.iter().all(png_lossless);
        if raw_frames {
            write_f32s(&dir.join("frames.f32"), &self.state.video)?;
        }
        if let Some(gt) = &self.gt {
            std::fs::create_dir_all(dir.join("gt"))?;
            for m in gt {
                io::write_mask(&dir.join("gt").join(io::frame_file_name(m.frame)), m)?;
            }
        }
        for rec in &self.state.rounds {
            let rd = round_dir(dir, rec.round);
            for sub in ["scribbles", "afi", "masks"] {
                std::fs::create_dir_all(rd.join(sub))?;
            }
            for (&t, strokes) in &rec.strokes {
                let doc = ScribbleDoc {
                    frame: t,
                    strokes: strokes.clone(),
                };
                io::write_scribbles(&rd.join("scribbles").join(format!("{t:05}.json")), &doc)?;
            }
            for (&t, m) in &rec.afi_masks {
                io::write_mask(&rd.join("afi").join(io::frame_file_name(t)), m)?;
            }
            for m in &rec.masks {
                io::write_mask(&rd.join("masks").join(io::frame_file_name(m.frame)), m)?;
            }
        }
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            num_frames: self.state.num_frames(),
            height: h,
            width: w,
            num_objects: self.state.num_objects,
            config: self.config.clone(),
            current_round: self.state.current_round,
            rounds: self
                .state
                .rounds
                .iter()
                .map(|r| RoundManifest {
                    round: r.round,
                    interacted: r.interacted.clone(),
                    wall_ms: r.wall_ms.clone(),
                })
                .collect(),
            ledger: self.ledger.clone(),
            has_ground_truth: self.gt.is_some(),
            raw_frames,
        };
        std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    /// Restores a saved session; memory is rebuilt from the stored
    /// interaction masks, round by round.
    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read(dir.join("manifest.json"))?;
        let value: serde_json::Value =
            serde_json::from_slice(&text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        match version {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Format(format!(
                    "manifest schema version {v} is not supported (this build reads version {SCHEMA_VERSION})"
                )));
            }
            None => return Err(Error::Format("manifest has no schema_version".into())),
        }
        let m: Manifest = serde_json::from_value(value).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let (h, w) = (m.height, m.width);
        let video = if m.raw_frames {
            read_f32s(&dir.join("frames.f32"), m.num_frames, h, w)?
        } else {
            (0..m.num_frames)
                .map(|t| io::read_frame(&dir.join("frames").join(io::frame_file_name(t)), t))
                .collect::<Result<Vec<_>>>()?
        };
        let mut session = Session::new(video, m.num_objects, m.config)?;
        if m.has_ground_truth {
            let gt = (0..m.num_frames)
                .map(|t| io::read_mask(&dir.join("gt").join(io::frame_file_name(t)), t, 0))
                .collect::<Result<Vec<_>>>()?;
            session = session.with_ground_truth(gt)?;
        }
        for rm in &m.rounds {
            let rd = round_dir(dir, rm.round);
            let mut strokes = BTreeMap::new();
            let mut scribbles = BTreeMap::new();
            let mut afi = BTreeMap::new();
            for &t in &rm.interacted {
                let doc = io::read_scribbles(&rd.join("scribbles").join(format!("{t:05}.json")))?;
                scribbles.insert(t, rasterize_strokes(&doc.strokes, h, w, t, rm.round)?);
                strokes.insert(t, doc.strokes);
                afi.insert(t, io::read_mask(&rd.join("afi").join(io::frame_file_name(t)), t, rm.round)?);
            }
            let masks = (0..m.num_frames)
                .map(|t| io::read_mask(&rd.join("masks").join(io::frame_file_name(t)), t, rm.round))
                .collect::<Result<Vec<_>>>()?;
            session.memory = session.memory_with(&afi, rm.round)?;
            session.state.rounds.push(RoundRecord {
                round: rm.round,
                interacted: rm.interacted.clone(),
                strokes,
                scribbles,
                afi_masks: afi,
                masks,
                wall_ms: rm.wall_ms.clone(),
            });
        }
        if m.rounds.windows(2).any(|w| w[0].round >= w[1].round) {
            return Err(Error::Format("round indices must increase".into()));
        }
        session.state.current_round = m.current_round;
        session.ledger = m.ledger;
        session.lifecycle = if m.rounds.is_empty() {
            Lifecycle::Created
        } else {
            Lifecycle::Idle
        };
        Ok(session)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, suite_recipe};

    fn small_session() -> Session {
        let mut cfg = suite_recipe().remove(0);
        cfg.num_frames = 6;
        let scene = generate_scene(&cfg).unwrap();
        Session::new(scene.frames, 3, EngineConfig::default())
            .unwrap()
            .with_ground_truth(scene.gt)
            .unwrap()
    }

    fn doc(frame: usize, id: u8) -> ScribbleDoc {
        ScribbleDoc {
            frame,
            strokes: vec![ScribbleStroke::new(id, 1.5, vec![[10.0, 10.0], [20.0, 12.0]])],
        }
    }

    #[test]
    fn lifecycle_rules() {
        let mut s = small_session();
        assert!(matches!(s.commit(&mut |_| {}), Err(Error::Precondition(_))));
        assert!(matches!(s.propagate(&mut |_| {}), Err(Error::Precondition(_))));
        assert!(matches!(s.submit_scribbles(2, &[doc(0, 1)]), Err(Error::Conflict(_))));
        assert!(matches!(s.submit_scribbles(1, &[]), Err(Error::InvalidArgument(_))));
        assert!(matches!(s.submit_scribbles(1, &[doc(0, 4)]), Err(Error::InvalidArgument(_))));
        assert_eq!(s.submit_scribbles(1, &[doc(3, 1), doc(1, 2)]).unwrap(), vec![1, 3]);
        assert_eq!(s.submit_scribbles(1, &[doc(2, 1)]).unwrap(), vec![2]);
        s.commit(&mut |_| {}).unwrap();
        assert!(matches!(s.commit(&mut |_| {}), Err(Error::Conflict(_))));
        assert!(matches!(s.submit_scribbles(1, &[doc(2, 1)]), Err(Error::Conflict(_))));
        let mut events = Vec::new();
        s.propagate(&mut |e| events.push(e)).unwrap();
        assert_eq!(s.current_round(), 2);
        assert_eq!(s.lifecycle(), Lifecycle::Idle);
        let phase2 = events.iter().filter(|e| e.stage == Stage::Repropagation).count();
        assert_eq!(phase2, 5);
        assert_eq!(s.masks(Some(1)).unwrap().len(), 6);
        assert!(matches!(s.submit_scribbles(1, &[doc(2, 1)]), Err(Error::Conflict(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let mut s = small_session();
        for r in 1..=2 {
            s.submit_scribbles(r, &[doc(r, 1), doc(4, 2)]).unwrap();
            s.commit(&mut |_| {}).unwrap();
            s.propagate(&mut |_| {}).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let back = Session::load(dir.path()).unwrap();
        for (a, b) in back.state.rounds.iter().zip(&s.state.rounds) {
            assert_eq!(a.masks, b.masks);
            assert_eq!(a.afi_masks, b.afi_masks);
            assert_eq!(a.scribbles, b.scribbles);
            assert_eq!(a.strokes, b.strokes);
            assert_eq!(a.wall_ms, b.wall_ms);
        }
        assert_eq!(back.state.rounds, s.state.rounds);
        assert_eq!(back.memory(), s.memory());
        assert_eq!(back.ledger(), s.ledger());
        assert_eq!(back.config(), s.config());
        assert_eq!(back.replay_round(2).unwrap(), s.masks(Some(2)).unwrap());
        assert_eq!(back.replay_round(1).unwrap(), s.masks(Some(1)).unwrap());
    }

    #[test]
    fn bad_manifests() {
        let s = small_session();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let p = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&p).unwrap();
        std::fs::write(&p, text.replace("\"schema_version\": 1", "\"schema_version\": 7")).unwrap();
        let err = Session::load(dir.path()).unwrap_err();
        assert!(matches!(&err, Error::Format(m) if m.contains('7')));
        std::fs::write(&p, "{ not json").unwrap();
        assert!(matches!(Session::load(dir.path()), Err(Error::Format(_))));
    }
}
