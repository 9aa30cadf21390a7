//! Parametric signing corpus for tests and smoke runs.
//!
//! Motion parameters are a deterministic function of the notation string, so
//! notation → motion is learnable; the sample RNG only adds placement and
//! detector jitter. Coordinates are pixels in a 640×480 frame. Legs and feet
//! are reported as undetected.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use super::{write_manifest, write_pose_file, DatasetTag, ManifestEntry, Sample, Split};
use crate::error::Result;
use crate::hamnosys::Vocabulary;
use crate::numerics::{seeded_rng, Rng64};
use crate::pose::*;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub min_symbols: usize,
    pub max_symbols: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    /// Detector noise, pixels.
    pub jitter: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            min_symbols: 5,
            max_symbols: 15,
            min_frames: 20,
            max_frames: 40,
            jitter: 0.5,
        }
    }
}

/// FNV-1a over the codepoints; stable across platforms and releases.
fn notation_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for c in s.chars() {
        for b in (c as u32).to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

struct Motion {
    frames: usize,
    arm_amp: [f64; 2],
    arm_base: [f64; 2],
    bend_amp: [f64; 2],
    freq: f64,
    phase: [f64; 2],
    curl_amp: f64,
    curl_freq: f64,
    mouth: f64,
    nod: f64,
}

impl Motion {
    fn from_notation(notation: &str, cfg: &SyntheticConfig) -> Self {
        let k = notation.chars().count().clamp(cfg.min_symbols, cfg.max_symbols);
        let span_sym = (cfg.max_symbols - cfg.min_symbols).max(1);
        let frames = cfg.min_frames
            + ((k - cfg.min_symbols) * (cfg.max_frames - cfg.min_frames) + span_sym / 2) / span_sym;
        let mut r = seeded_rng(notation_hash(notation));
        Motion {
            frames,
            arm_amp: [r.random_range(0.1..0.6), r.random_range(0.1..0.6)],
            arm_base: [r.random_range(0.2..0.8), r.random_range(0.2..0.8)],
            bend_amp: [r.random_range(0.1..0.5), r.random_range(0.1..0.5)],
            freq: r.random_range(0.5..2.0),
            phase: [r.random_range(0.0..2.0 * PI), r.random_range(0.0..2.0 * PI)],
            curl_amp: r.random_range(0.05..0.35),
            curl_freq: r.random_range(0.5..2.5),
            mouth: r.random_range(0.0..6.0),
            nod: r.random_range(0.0..4.0),
        }
    }
}

fn random_notation(rng: &mut Rng64, vocab: &Vocabulary, cfg: &SyntheticConfig) -> String {
    let k = rng.random_range(cfg.min_symbols..=cfg.max_symbols);
    (0..k)
        .map(|_| vocab.symbols()[rng.random_range(0..vocab.len())])
        .collect()
}

fn set(frame: &mut [f64], k: usize, p: (f64, f64)) {
    frame[2 * k] = p.0;
    frame[2 * k + 1] = p.1;
}

fn step(from: (f64, f64), len: f64, angle: f64) -> (f64, f64) {
    (from.0 + len * angle.sin(), from.1 + len * angle.cos())
}

/// Writes one 21-point hand; `side` is +1 for the image-left (right) hand.
fn hand(frame: &mut [f64], start: usize, wrist: (f64, f64), dir: f64, curl: f64, side: f64) {
    set(frame, start, wrist);
    const SEGMENTS: [f64; 4] = [10.0, 8.0, 7.0, 6.0];
    for f in 0..5 {
        let mut angle = dir + side * (f as f64 - 2.0) * 0.28;
        let mut p = wrist;
        for (j, &len) in SEGMENTS.iter().enumerate() {
            p = step(p, len, angle);
            set(frame, start + 1 + 4 * f + j, p);
            angle += side * curl;
        }
    }
}

fn face(frame: &mut [f64], centre: (f64, f64), mouth_open: f64) {
    let (cx, cy) = centre;
    let mut k = FACE_START;
    let mut put = |p: (f64, f64)| {
        set(frame, k, p);
        k += 1;
    };
    for i in 0..17 {
        let a = PI * (0.05 + 0.9 * i as f64 / 16.0);
        put((cx - 28.0 * a.cos(), cy + 35.0 * a.sin() - 5.0));
    }
    for i in 0..10 {
        let x = cx - 22.0 + 44.0 * i as f64 / 9.0 + if i < 5 { -2.0 } else { 2.0 };
        put((x, cy - 15.0));
    }
    for i in 0..9 {
        put((cx + (i as f64 - 4.0) * if i < 4 { 0.0 } else { 2.0 }, cy - 8.0 + 2.0 * i.min(4) as f64));
    }
    for side in [-1.0, 1.0] {
        for i in 0..6 {
            let a = 2.0 * PI * i as f64 / 6.0;
            put((cx + side * 12.0 + 5.0 * a.cos(), cy - 8.0 + 2.5 * a.sin()));
        }
    }
    for i in 0..20 {
        let a = 2.0 * PI * i as f64 / 20.0;
        put((cx + 11.0 * a.cos(), cy + 18.0 + (2.0 + mouth_open) * a.sin()));
    }
    put((cx - 12.0, cy - 8.0));
    put((cx + 12.0, cy - 8.0));
    debug_assert_eq!(k, FACE_START + FACE_KEYPOINTS);
}

/// One synthetic frame at phase `u ∈ [0, 1]`.
fn render(m: &Motion, u: f64, origin: (f64, f64), scale: f64) -> Vec<f64> {
    let mut f = vec![0.0; POSE_DIM];
    let at = |x: f64, y: f64| (origin.0 + scale * x, origin.1 + scale * y);
    let neck = at(0.0, 0.0);
    let nod = m.nod * (2.0 * PI * m.freq * u).sin();
    let head = at(0.0, -55.0 + nod);
    set(&mut f, NOSE, at(0.0, -50.0 + nod));
    set(&mut f, NECK, neck);
    set(&mut f, 15, at(-10.0, -62.0 + nod));
    set(&mut f, 16, at(10.0, -62.0 + nod));
    set(&mut f, 17, at(-22.0, -56.0 + nod));
    set(&mut f, 18, at(22.0, -56.0 + nod));
    set(&mut f, 8, at(0.0, 180.0));
    set(&mut f, 9, at(-25.0, 180.0));
    set(&mut f, 12, at(25.0, 180.0));

    let arms = [(R_SHOULDER, R_ELBOW, R_WRIST, RIGHT_HAND_START, -60.0, 1.0), (L_SHOULDER, L_ELBOW, L_WRIST, LEFT_HAND_START, 60.0, -1.0)];
    for (i, &(sh, el, wr, hand_start, dx, side)) in arms.iter().enumerate() {
        let wave = (2.0 * PI * m.freq * u + m.phase[i]).sin();
        // Angles measured from straight down; positive rotates toward the
        // body midline for this side.
        let upper = -side * (m.arm_base[i] + m.arm_amp[i] * wave);
        let bend = 1.2 + m.bend_amp[i] * (2.0 * PI * m.freq * u + m.phase[i] + 1.0).cos();
        let fore = upper + side * bend;
        let shoulder = at(dx, 5.0);
        let elbow = step(shoulder, 80.0 * scale, upper);
        let wrist = step(elbow, 70.0 * scale, fore);
        set(&mut f, sh, shoulder);
        set(&mut f, el, elbow);
        set(&mut f, wr, wrist);
        let curl = m.curl_amp * (1.0 + (2.0 * PI * m.curl_freq * u + m.phase[i]).sin());
        hand(&mut f, hand_start, wrist, fore, curl, side);
    }
    face(&mut f, head, m.mouth * (0.5 + 0.5 * (2.0 * PI * m.freq * u).sin()));
    f
}

fn confidence_template() -> Vec<f64> {
    let mut c = vec![0.0; NUM_KEYPOINTS];
    for k in [NOSE, NECK, R_SHOULDER, R_ELBOW, R_WRIST, L_SHOULDER, L_ELBOW, L_WRIST, 15, 16, 17, 18] {
        c[k] = 0.9;
    }
    for k in [8, 9, 12] {
        c[k] = 0.8;
    }
    c[FACE_START..FACE_START + FACE_KEYPOINTS].fill(0.85);
    c[LEFT_HAND_START..NUM_KEYPOINTS].fill(0.75);
    c
}

/// A sample for a given notation; the RNG draws placement and jitter.
pub fn synthetic_sample_for(
    id: &str,
    notation: &str,
    rng: &mut Rng64,
    cfg: &SyntheticConfig,
) -> Sample {
    let motion = Motion::from_notation(notation, cfg);
    let origin = (rng.random_range(280.0..360.0), rng.random_range(140.0..180.0));
    let scale = rng.random_range(0.9..1.1);
    let conf_frame = confidence_template();
    let mut coords = Vec::with_capacity(motion.frames * POSE_DIM);
    let mut confidence = Vec::with_capacity(motion.frames * NUM_KEYPOINTS);
    for t in 0..motion.frames {
        let u = t as f64 / (motion.frames - 1).max(1) as f64;
        let mut frame = render(&motion, u, origin, scale);
        for k in 0..NUM_KEYPOINTS {
            if conf_frame[k] > 0.0 {
                frame[2 * k] += cfg.jitter * rng.sample::<f64, _>(StandardNormal);
                frame[2 * k + 1] += cfg.jitter * rng.sample::<f64, _>(StandardNormal);
            } else {
                frame[2 * k] = 0.0;
                frame[2 * k + 1] = 0.0;
            }
        }
        coords.extend(frame);
        confidence.extend_from_slice(&conf_frame);
    }
    Sample {
        id: id.to_string(),
        hamnosys: notation.to_string(),
        pose: PoseSequence::new(coords, confidence, DEFAULT_FPS).expect("whole frames"),
        dataset_tag: DatasetTag::Synthetic,
    }
}

/// `n` samples with ids `syn_0000`, `syn_0001`, … drawn from `seed`.
pub fn synthetic_corpus(n: usize, seed: u64, vocab: &Vocabulary, cfg: &SyntheticConfig) -> Vec<Sample> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|i| {
            let notation = random_notation(&mut rng, vocab, cfg);
            synthetic_sample_for(&format!("syn_{i:04}"), &notation, &mut rng, cfg)
        })
        .collect()
}

/// Default split: with ten or more samples every tenth goes to dev and the
/// one after it to test.
pub fn default_split(index: usize, total: usize) -> Split {
    if total < 10 {
        return Split::Train;
    }
    match index % 10 {
        8 => Split::Dev,
        9 => Split::Test,
        _ => Split::Train,
    }
}

/// Writes `poses/<id>.json` files plus `manifest.csv` under `dir`.
pub fn write_corpus(dir: &Path, samples: &[Sample], split: impl Fn(usize) -> Split) -> Result<PathBuf> {
    let poses = dir.join("poses");
    std::fs::create_dir_all(&poses)?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let path = poses.join(format!("{}.json", s.id));
        write_pose_file(&path, s)?;
        entries.push(ManifestEntry {
            id: s.id.clone(),
            path,
            dataset_tag: s.dataset_tag,
            split: split(i),
        });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{filter_frames, normalize_pose, DEFAULT_MIN_CONFIDENCE};

    #[test]
    fn corpus_is_valid_and_reproducible() {
        let vocab = Vocabulary::default_hamnosys();
        let cfg = SyntheticConfig::default();
        let a = synthetic_corpus(12, 7, &vocab, &cfg);
        assert_eq!(a, synthetic_corpus(12, 7, &vocab, &cfg));
        for s in &a {
            let k = s.hamnosys.chars().count();
            assert!((5..=15).contains(&k));
            assert!((20..=40).contains(&s.pose.frames()));
            assert_eq!(s.pose.frames(), 20 + 2 * (k - 5));
            assert!(vocab.tokenize(&s.hamnosys).is_ok());
            let kept = filter_frames(s, DEFAULT_MIN_CONFIDENCE).unwrap();
            assert_eq!(kept.pose.frames(), s.pose.frames());
            assert!(s.pose.coords.iter().all(|v| v.is_finite()));
            let (n, _) = normalize_pose(&s.pose).unwrap();
            let max = n.coords.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max < 10.0, "normalized extent {max}");
        }
    }

    #[test]
    fn same_notation_same_motion() {
        let cfg = SyntheticConfig {
            jitter: 0.0,
            ..SyntheticConfig::default()
        };
        let mut r1 = seeded_rng(1);
        let mut r2 = seeded_rng(1);
        let a = synthetic_sample_for("a", "\u{E000}\u{E001}\u{E002}\u{E003}\u{E004}", &mut r1, &cfg);
        let b = synthetic_sample_for("b", "\u{E000}\u{E001}\u{E002}\u{E003}\u{E004}", &mut r2, &cfg);
        assert_eq!(a.pose, b.pose);
    }

    #[test]
    fn writes_manifest_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = Vocabulary::default_hamnosys();
        let samples = synthetic_corpus(3, 1, &vocab, &SyntheticConfig::default());
        let manifest = write_corpus(dir.path(), &samples, |_| Split::Train).unwrap();
        let entries = crate::data::read_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), 3);
        let back = crate::data::parse_pose_file(&entries[1].path).unwrap();
        assert_eq!(back, samples[1]);
    }
}
