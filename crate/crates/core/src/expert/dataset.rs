//! Demonstration dataset on disk.
//!
//! Layout: a TOML manifest, one binary record file per demo (length-prefixed
//! sections, little-endian, sha256 trailer), and the canonical part clouds
//! stored once. Scene clouds are reconstructed from states at load time.

use crate::cloud::{read_cloud, write_cloud, CanonicalClouds, CloudConfig, PointCloud};
use crate::expert::collect::{DemoMeta, DemoRecord, Demonstration, DATASET_SCHEMA_VERSION};
use crate::math::{Pose, Quat, Vec3};
use crate::scene::{SceneSpec, SKILL_COUNT};
use crate::world::{
    ActionMode, Attachment, EEAction, EndEffector, GripCommand, GripperMode, Query, World,
    WorldState,
};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("schema mismatch: file has {found}, expected {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("corrupt record file {0}: {1}")]
    CorruptRecord(PathBuf, String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("cloud error: {0}")]
    Cloud(#[from] crate::cloud::CloudError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub demo_count: usize,
    pub total_records: usize,
    pub records_per_skill: [usize; SKILL_COUNT],
    pub config_hash: String,
    pub cloud_seed: u64,
    pub demo_files: Vec<String>,
    pub cloud_files: Vec<String>,
    pub gripper_open_file: String,
    pub gripper_close_file: String,
}

#[derive(Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    pub demos: Vec<Demonstration>,
    pub clouds: CanonicalClouds,
}

const MAGIC: &[u8; 4] = b"TBLD";
const SEC_META: u32 = 1;
const SEC_QUERIES: u32 = 2;
const SEC_SUBTASK: u32 = 3;
const SEC_STATES: u32 = 4;
const SEC_ACTIONS: u32 = 5;

struct SectionWriter {
    buf: Vec<u8>,
}

impl SectionWriter {
    fn new() -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&DATASET_SCHEMA_VERSION.to_le_bytes());
        SectionWriter { buf }
    }

    fn section(&mut self, tag: u32, payload: &[u8]) {
        self.buf.extend_from_slice(&tag.to_le_bytes());
        self.buf.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(payload);
    }

    fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }
}

fn push_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_pose(buf: &mut Vec<u8>, p: &Pose) {
    push_f64(buf, p.position.x);
    push_f64(buf, p.position.y);
    push_f64(buf, p.position.z);
    let q = p.orientation.quaternion();
    push_f64(buf, q.w);
    push_f64(buf, q.i);
    push_f64(buf, q.j);
    push_f64(buf, q.k);
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn f64(&mut self) -> f64 {
        let v = f64::from_le_bytes(self.data[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        v
    }

    fn pose(&mut self) -> Pose {
        let pos = Vec3::new(self.f64(), self.f64(), self.f64());
        let (w, i, j, k) = (self.f64(), self.f64(), self.f64(), self.f64());
        // Keep stored bits exact; stored quaternions are already unit.
        let q = Quat::new_unchecked(nalgebra::Quaternion::new(w, i, j, k));
        Pose::new(pos, q)
    }
}

fn encode_state(state: &WorldState, buf: &mut Vec<u8>) {
    for pose in &state.part_poses {
        push_pose(buf, pose);
    }
    push_f64(buf, state.ee.position.x);
    push_f64(buf, state.ee.position.y);
    push_f64(buf, state.ee.position.z);
    push_f64(buf, state.ee.yaw);
    push_f64(buf, if state.ee.mode == GripperMode::Close { 1.0 } else { 0.0 });
    push_f64(buf, state.ee.held.map_or(-1.0, |p| p as f64));
    match state.ee.held_offset {
        Some(off) => {
            push_f64(buf, 1.0);
            push_pose(buf, &off);
        }
        None => {
            push_f64(buf, 0.0);
            push_pose(buf, &Pose::identity());
        }
    }
    push_f64(buf, state.ee.grip_axial.unwrap_or(-1.0));
    push_f64(buf, state.ee.wrist_travel);
    for att in &state.attachments {
        let (code, part) = match att {
            Attachment::Empty => (0.0, -1.0),
            Attachment::Inserted(p) => (1.0, *p as f64),
            Attachment::Screwed(p) => (2.0, *p as f64),
        };
        push_f64(buf, code);
        push_f64(buf, part);
    }
    for v in &state.screw_progress {
        push_f64(buf, *v);
    }
    push_f64(buf, if state.stabilized { 1.0 } else { 0.0 });
    push_f64(buf, state.step_count as f64);
}

fn decode_state(cur: &mut Cursor, parts: usize, contacts: usize) -> WorldState {
    let part_poses: Vec<Pose> = (0..parts).map(|_| cur.pose()).collect();
    let position = Vec3::new(cur.f64(), cur.f64(), cur.f64());
    let yaw = cur.f64();
    let mode = if cur.f64() > 0.5 { GripperMode::Close } else { GripperMode::Open };
    let held_raw = cur.f64();
    let held = if held_raw < 0.0 { None } else { Some(held_raw as usize) };
    let has_offset = cur.f64() > 0.5;
    let offset_pose = cur.pose();
    let held_offset = if has_offset { Some(offset_pose) } else { None };
    let axial_raw = cur.f64();
    let grip_axial = if axial_raw < 0.0 { None } else { Some(axial_raw) };
    let wrist_travel = cur.f64();
    let attachments: Vec<Attachment> = (0..contacts)
        .map(|_| {
            let code = cur.f64();
            let part = cur.f64();
            match code as i64 {
                0 => Attachment::Empty,
                1 => Attachment::Inserted(part as usize),
                _ => Attachment::Screwed(part as usize),
            }
        })
        .collect();
    let screw_progress: Vec<f64> = (0..contacts).map(|_| cur.f64()).collect();
    let stabilized = cur.f64() > 0.5;
    let step_count = cur.f64() as u64;
    WorldState {
        part_poses,
        ee: EndEffector {
            position,
            yaw,
            mode,
            held,
            held_offset,
            grip_axial,
            wrist_travel,
        },
        attachments,
        screw_progress,
        stabilized,
        step_count,
    }
}

fn encode_demo(demo: &Demonstration) -> Vec<u8> {
    let mut w = SectionWriter::new();
    let meta = serde_json::to_vec(&demo.meta).expect("meta serializes");
    w.section(SEC_META, &meta);

    let mut queries = Vec::with_capacity(demo.records.len() * 6);
    for r in &demo.records {
        queries.extend_from_slice(&(r.query.skill.index() as u16).to_le_bytes());
        queries.extend_from_slice(&(r.query.part as u16).to_le_bytes());
        queries.extend_from_slice(&(r.query.contact as u16).to_le_bytes());
    }
    w.section(SEC_QUERIES, &queries);

    let mut subtasks = Vec::with_capacity(demo.records.len() * 3);
    for r in &demo.records {
        subtasks.extend_from_slice(&(r.subtask as u16).to_le_bytes());
        subtasks.push(r.boundary as u8);
    }
    w.section(SEC_SUBTASK, &subtasks);

    let mut states = Vec::new();
    for r in &demo.records {
        encode_state(&r.state, &mut states);
    }
    w.section(SEC_STATES, &states);

    let mut actions = Vec::with_capacity(demo.records.len() * 48);
    for r in &demo.records {
        push_f64(&mut actions, if r.action.mode == ActionMode::Absolute { 1.0 } else { 0.0 });
        push_f64(&mut actions, r.action.translation.x);
        push_f64(&mut actions, r.action.translation.y);
        push_f64(&mut actions, r.action.translation.z);
        push_f64(&mut actions, r.action.d_yaw);
        let g = match r.action.gripper {
            GripCommand::Open => -1.0,
            GripCommand::Hold => 0.0,
            GripCommand::Close => 1.0,
        };
        push_f64(&mut actions, g);
    }
    w.section(SEC_ACTIONS, &actions);
    w.finish()
}

fn decode_demo(bytes: &[u8], path: &Path, parts: usize, contacts: usize) -> Result<Demonstration, DatasetError> {
    let corrupt = |why: &str| DatasetError::CorruptRecord(path.to_path_buf(), why.into());
    if bytes.len() < 8 + 32 {
        return Err(corrupt("file too short"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(corrupt("checksum mismatch"));
    }
    if &body[0..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != DATASET_SCHEMA_VERSION {
        return Err(DatasetError::SchemaMismatch { found: version, expected: DATASET_SCHEMA_VERSION });
    }
    let mut pos = 8usize;
    let mut meta: Option<DemoMeta> = None;
    let mut queries: Vec<Query> = vec![];
    let mut subtasks: Vec<(u16, bool)> = vec![];
    let mut states: Vec<WorldState> = vec![];
    let mut actions: Vec<EEAction> = vec![];
    while pos < body.len() {
        if pos + 12 > body.len() {
            return Err(corrupt("truncated section header"));
        }
        let tag = u32::from_le_bytes(body[pos..pos + 4].try_into().unwrap());
        let len = u64::from_le_bytes(body[pos + 4..pos + 12].try_into().unwrap()) as usize;
        pos += 12;
        if pos + len > body.len() {
            return Err(corrupt("truncated section payload"));
        }
        let payload = &body[pos..pos + len];
        pos += len;
        match tag {
            SEC_META => {
                meta = Some(
                    serde_json::from_slice(payload)
                        .map_err(|e| corrupt(&format!("meta json: {e}")))?,
                );
            }
            SEC_QUERIES => {
                for c in payload.chunks_exact(6) {
                    let skill = u16::from_le_bytes(c[0..2].try_into().unwrap()) as usize;
                    let part = u16::from_le_bytes(c[2..4].try_into().unwrap()) as usize;
                    let contact = u16::from_le_bytes(c[4..6].try_into().unwrap()) as usize;
                    let skill = crate::scene::Skill::from_index(skill)
                        .ok_or_else(|| corrupt("bad skill index"))?;
                    queries.push(Query::new(skill, part, contact));
                }
            }
            SEC_SUBTASK => {
                for c in payload.chunks_exact(3) {
                    let id = u16::from_le_bytes(c[0..2].try_into().unwrap());
                    subtasks.push((id, c[2] != 0));
                }
            }
            SEC_STATES => {
                let mut cur = Cursor { data: payload, pos: 0 };
                while cur.pos < payload.len() {
                    states.push(decode_state(&mut cur, parts, contacts));
                }
            }
            SEC_ACTIONS => {
                for c in payload.chunks_exact(48) {
                    let mut cur = Cursor { data: c, pos: 0 };
                    let mode = if cur.f64() > 0.5 { ActionMode::Absolute } else { ActionMode::Delta };
                    let translation = Vec3::new(cur.f64(), cur.f64(), cur.f64());
                    let d_yaw = cur.f64();
                    let gripper = match cur.f64() {
                        g if g < -0.5 => GripCommand::Open,
                        g if g > 0.5 => GripCommand::Close,
                        _ => GripCommand::Hold,
                    };
                    actions.push(EEAction { mode, translation, d_yaw, gripper });
                }
            }
            _ => {}
        }
    }
    let meta = meta.ok_or_else(|| corrupt("missing meta section"))?;
    let n = meta.record_count;
    if queries.len() != n || subtasks.len() != n || states.len() != n || actions.len() != n {
        return Err(corrupt("section lengths disagree with record count"));
    }
    let records = (0..n)
        .map(|i| DemoRecord {
            step: i as u32,
            subtask: subtasks[i].0 as u32,
            query: queries[i],
            state: states[i].clone(),
            action: actions[i],
            boundary: subtasks[i].1,
        })
        .collect();
    Ok(Demonstration { meta, records })
}

/// Write demos, canonical clouds, and the manifest under `dir`.
pub fn write_dataset(
    demos: &[Demonstration],
    clouds: &CanonicalClouds,
    cloud_seed: u64,
    config_hash: &str,
    dir: &Path,
) -> Result<Manifest, DatasetError> {
    fs::create_dir_all(dir.join("demos")).map_err(io_err(dir))?;
    fs::create_dir_all(dir.join("clouds")).map_err(io_err(dir))?;

    let mut cloud_files = vec![];
    for (i, pc) in clouds.parts.iter().enumerate() {
        let rel = format!("clouds/part_{i}.bin");
        write_cloud_file(pc, &dir.join(&rel))?;
        cloud_files.push(rel);
    }
    let gripper_open_file = "clouds/gripper_open.bin".to_string();
    let gripper_close_file = "clouds/gripper_close.bin".to_string();
    write_cloud_file(&clouds.gripper_open, &dir.join(&gripper_open_file))?;
    write_cloud_file(&clouds.gripper_close, &dir.join(&gripper_close_file))?;

    let mut demo_files = vec![];
    let mut total_records = 0usize;
    let mut records_per_skill = [0usize; SKILL_COUNT];
    for (i, demo) in demos.iter().enumerate() {
        let rel = format!("demos/demo_{i:04}.bin");
        let bytes = encode_demo(demo);
        fs::write(dir.join(&rel), &bytes).map_err(io_err(dir))?;
        demo_files.push(rel);
        total_records += demo.records.len();
        for (k, c) in demo.records_per_skill().iter().enumerate() {
            records_per_skill[k] += c;
        }
    }

    let manifest = Manifest {
        schema_version: DATASET_SCHEMA_VERSION,
        demo_count: demos.len(),
        total_records,
        records_per_skill,
        config_hash: config_hash.to_string(),
        cloud_seed,
        demo_files,
        cloud_files,
        gripper_open_file,
        gripper_close_file,
    };
    let text = toml::to_string_pretty(&manifest).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    fs::write(dir.join("manifest.toml"), text).map_err(io_err(dir))?;
    Ok(manifest)
}

fn write_cloud_file(pc: &PointCloud, path: &Path) -> Result<(), DatasetError> {
    let mut buf = Vec::new();
    write_cloud(pc, &mut buf)?;
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&buf).map_err(io_err(path))?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let path = dir.join("manifest.toml");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    if manifest.schema_version != DATASET_SCHEMA_VERSION {
        return Err(DatasetError::SchemaMismatch {
            found: manifest.schema_version,
            expected: DATASET_SCHEMA_VERSION,
        });
    }
    Ok(manifest)
}

/// Load the whole dataset; verifies checksums and the schema version.
pub fn read_dataset(dir: &Path, scene: &SceneSpec) -> Result<Dataset, DatasetError> {
    let manifest = read_manifest(dir)?;
    let parts = scene.part_count();
    let contacts = scene.contact_count();
    let mut demos = Vec::with_capacity(manifest.demo_count);
    for rel in &manifest.demo_files {
        let path = dir.join(rel);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        demos.push(decode_demo(&bytes, &path, parts, contacts)?);
    }
    let mut part_clouds = Vec::with_capacity(manifest.cloud_files.len());
    for rel in &manifest.cloud_files {
        let path = dir.join(rel);
        part_clouds.push(read_cloud_from(&path)?);
    }
    let gripper_open = read_cloud_from(&dir.join(&manifest.gripper_open_file))?;
    let gripper_close = read_cloud_from(&dir.join(&manifest.gripper_close_file))?;
    Ok(Dataset {
        manifest,
        demos,
        clouds: CanonicalClouds { parts: part_clouds, gripper_open, gripper_close },
    })
}

fn read_cloud_from(path: &Path) -> Result<PointCloud, DatasetError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut slice = bytes.as_slice();
    Ok(read_cloud(&mut slice)?)
}

/// Collect many demos, skipping expert failures, and write the dataset.
pub fn collect_dataset(
    world: &World,
    n_demos: usize,
    base_seed: u64,
    cfg: &crate::expert::collect::CollectConfig,
    cloud_cfg: &CloudConfig,
    config_hash: &str,
    dir: &Path,
) -> Result<(Manifest, usize), DatasetError> {
    let mut demos = Vec::with_capacity(n_demos);
    let mut failures = 0usize;
    let mut seed = base_seed;
    while demos.len() < n_demos {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x1234_5678_9abc_def0);
        let order = crate::world::random_order(world.scene.contact_count(), &mut rng);
        match crate::expert::collect::collect_demo(world, seed, order, cfg) {
            Ok(demo) => demos.push(demo),
            Err(_) => failures += 1,
        }
        seed = seed.wrapping_add(1);
    }
    let cloud_seed = base_seed ^ 0x5eed_c10d;
    let clouds = CanonicalClouds::generate(&world.scene, cloud_cfg, cloud_seed)?;
    let manifest = write_dataset(&demos, &clouds, cloud_seed, config_hash, dir)?;
    Ok((manifest, failures))
}
