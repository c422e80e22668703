//! Checkpoints: `<stem>.ply` holds the Gaussians (binary little-endian,
//! double properties), `<stem>.env.pfm` a float32 copy of the environment map
//! for viewers, and `<stem>.state.bin` everything needed to resume bit-exactly
//! (config text, optimizer moments, RNG position, full-precision env texels).

use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

use crate::envmap::EnvironmentMap;
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, GaussianCloud};
use crate::io::pfm;
use crate::optim::Moments;
use crate::sh::NUM_COEFFS;
use crate::trainer::{Stage, TrainConfig, TrainState, NUM_GROUPS};

pub const FORMAT_VERSION: u32 = 1;
const STATE_MAGIC: &[u8; 8] = b"DSPLATST";

pub fn property_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.push("opacity_raw".into());
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..3 * (NUM_COEFFS - 1)).map(|i| format!("f_rest_{i}")));
    names.push("reflection_strength".into());
    names
}

fn gaussian_values(g: &Gaussian) -> Vec<f64> {
    let mut v = Vec::with_capacity(60);
    v.extend_from_slice(&g.position);
    v.extend_from_slice(&g.rotation);
    v.extend_from_slice(&g.log_scale);
    v.push(g.opacity_raw);
    v.extend_from_slice(&g.sh[0]);
    for c in 0..3 {
        for k in 1..NUM_COEFFS {
            v.push(g.sh[k][c]);
        }
    }
    v.push(g.reflection_strength);
    v
}

fn gaussian_from_values(v: &[f64]) -> Gaussian {
    let mut g = Gaussian {
        position: [v[0], v[1], v[2]],
        rotation: [v[3], v[4], v[5], v[6]],
        log_scale: [v[7], v[8], v[9]],
        opacity_raw: v[10],
        reflection_strength: v[59],
        ..Default::default()
    };
    g.sh[0] = [v[11], v[12], v[13]];
    for c in 0..3 {
        for k in 1..NUM_COEFFS {
            g.sh[k][c] = v[14 + c * (NUM_COEFFS - 1) + k - 1];
        }
    }
    g
}

pub fn encode_ply(cloud: &GaussianCloud) -> Vec<u8> {
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\ncomment format_version {FORMAT_VERSION}\nelement vertex {}\n",
        cloud.len()
    );
    for n in property_names() {
        header.push_str(&format!("property double {n}\n"));
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    for g in &cloud.gaussians {
        for v in gaussian_values(g) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_ply(bytes: &[u8], path: &Path) -> Result<GaussianCloud> {
    let err = |m: String| Error::parse(path, format!("PLY: {m}"));
    let end = b"end_header\n";
    let hdr_end = bytes
        .windows(end.len())
        .position(|w| w == end)
        .ok_or_else(|| err("missing end_header".into()))?
        + end.len();
    let header = std::str::from_utf8(&bytes[..hdr_end]).map_err(|_| err("header is not UTF-8".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(err("missing `ply` magic".into()));
    }
    let mut count = None;
    let mut version = None;
    let mut props = Vec::new();
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "binary_little_endian", "1.0"] => {}
            ["format", f, ..] => return Err(err(format!("unsupported format {f}"))),
            ["comment", "format_version", v] => version = Some(v.to_string()),
            ["comment", ..] => {}
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| err(format!("bad vertex count {n}")))?),
            ["element", e, ..] => return Err(err(format!("unexpected element {e}"))),
            ["property", "double", name] => props.push(name.to_string()),
            ["property", ..] => return Err(err(format!("unsupported property line `{line}`"))),
            ["end_header"] => break,
            _ => return Err(err(format!("unexpected header line `{line}`"))),
        }
    }
    let expected = FORMAT_VERSION.to_string();
    match version {
        Some(v) if v == expected => {}
        found => {
            return Err(Error::Version {
                path: path.into(),
                found: found.unwrap_or_else(|| "none".into()),
                expected,
            })
        }
    }
    if props != property_names() {
        return Err(err("property list does not match the Gaussian layout".into()));
    }
    let count = count.ok_or_else(|| err("missing vertex element".into()))?;
    let stride = props.len() * 8;
    let body = &bytes[hdr_end..];
    if body.len() != count * stride {
        return Err(err(format!("expected {} body bytes, found {}", count * stride, body.len())));
    }
    let gaussians = body
        .chunks_exact(stride)
        .map(|rec| {
            let v: Vec<f64> = rec.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
            gaussian_from_values(&v)
        })
        .collect();
    Ok(GaussianCloud::new(gaussians))
}

/// Little-endian byte writer/reader for the state file.
struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|&x| self.f64(x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos.saturating_add(n))
            .ok_or_else(|| Error::parse(self.path, format!("state file truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.saturating_mul(elem) > self.buf.len() - self.pos {
            return Err(Error::parse(self.path, format!("state file truncated at byte {}", self.pos)));
        }
        Ok(n)
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Everything a checkpoint holds.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub cloud: GaussianCloud,
    pub env: EnvironmentMap,
    pub state: TrainState,
    pub reflective_history: Vec<(u64, usize)>,
}

pub fn config_hash(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

fn opt_u64(v: Option<u64>) -> u64 {
    v.map_or(u64::MAX, |x| x)
}

pub fn encode_state(ck: &Checkpoint) -> Vec<u8> {
    let s = &ck.state;
    let text = ck.config.to_text();
    let mut w = Writer(STATE_MAGIC.to_vec());
    w.u32(FORMAT_VERSION);
    w.0.extend_from_slice(&config_hash(&text));
    w.bytes(text.as_bytes());
    w.u64(s.iteration);
    w.u32(match s.stage {
        Stage::Bootstrap => 0,
        Stage::Reflection => 1,
    });
    s.group_steps.iter().for_each(|&g| w.u64(g));
    w.u64(s.reflective_count as u64);
    w.u64(s.best_count as u64);
    w.u64(s.best_iter);
    w.u32(s.propagation_active as u32);
    w.u32(s.sh_unlocked as u32);
    w.u64(opt_u64(s.terminated_at));
    w.0.extend_from_slice(&s.rng.get_seed());
    w.u64(s.rng.get_stream());
    w.0.extend_from_slice(&s.rng.get_word_pos().to_le_bytes());
    w.u64(s.view_order.len() as u64);
    s.view_order.iter().for_each(|&v| w.u64(v as u64));
    w.u64(s.view_cursor as u64);
    w.f64s(&s.moments.m);
    w.f64s(&s.moments.v);
    w.f64s(&s.env_moments.m);
    w.f64s(&s.env_moments.v);
    w.f64s(&s.grad_accum);
    w.u64(s.grad_count.len() as u64);
    s.grad_count.iter().for_each(|&c| w.u64(c));
    w.u64(ck.reflective_history.len() as u64);
    for &(it, n) in &ck.reflective_history {
        w.u64(it);
        w.u64(n as u64);
    }
    w.u64(ck.env.height as u64);
    let flat: Vec<f64> = ck.env.texels.iter().flatten().copied().collect();
    w.f64s(&flat);
    w.0
}

pub struct DecodedState {
    pub config: TrainConfig,
    pub state: TrainState,
    pub env: EnvironmentMap,
    pub reflective_history: Vec<(u64, usize)>,
}

pub fn decode_state(bytes: &[u8], path: &Path) -> Result<DecodedState> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    if r.take(8)? != STATE_MAGIC {
        return Err(Error::parse(path, "not a training state file (bad magic)"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            path: path.into(),
            found: version.to_string(),
            expected: FORMAT_VERSION.to_string(),
        });
    }
    let hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let text = std::str::from_utf8(r.bytes()?).map_err(|_| Error::parse(path, "config text is not UTF-8"))?;
    if config_hash(text) != hash {
        return Err(Error::parse(path, "config hash mismatch"));
    }
    let config = TrainConfig::parse(text).map_err(|e| Error::parse(path, format!("embedded config: {e}")))?;
    let iteration = r.u64()?;
    let stage = match r.u32()? {
        0 => Stage::Bootstrap,
        1 => Stage::Reflection,
        s => return Err(Error::parse(path, format!("unknown stage {s}"))),
    };
    let mut group_steps = [0u64; NUM_GROUPS];
    for g in &mut group_steps {
        *g = r.u64()?;
    }
    let reflective_count = r.u64()? as usize;
    let best_count = r.u64()? as usize;
    let best_iter = r.u64()?;
    let propagation_active = r.u32()? != 0;
    let sh_unlocked = r.u32()? != 0;
    let terminated_at = Some(r.u64()?).filter(|&t| t != u64::MAX);
    let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    let n = r.len(8)?;
    let view_order = (0..n).map(|_| r.u64().map(|v| v as usize)).collect::<Result<_>>()?;
    let view_cursor = r.u64()? as usize;
    let moments = Moments { m: r.f64s()?, v: r.f64s()? };
    let env_moments = Moments { m: r.f64s()?, v: r.f64s()? };
    let grad_accum = r.f64s()?;
    let n = r.len(8)?;
    let grad_count = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
    let n = r.len(16)?;
    let reflective_history = (0..n)
        .map(|_| Ok((r.u64()?, r.u64()? as usize)))
        .collect::<Result<_>>()?;
    let env_h = r.u64()? as usize;
    let flat = r.f64s()?;
    if flat.len() % 3 != 0 {
        return Err(Error::parse(path, "environment texel count is not a multiple of 3"));
    }
    let texels = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let env = EnvironmentMap::new(env_h, 2 * env_h, texels).map_err(|e| Error::parse(path, e.to_string()))?;
    if r.pos != bytes.len() {
        return Err(Error::parse(path, "trailing bytes after state"));
    }
    Ok(DecodedState {
        config,
        state: TrainState {
            iteration,
            stage,
            moments,
            env_moments,
            group_steps,
            reflective_count,
            best_count,
            best_iter,
            propagation_active,
            sh_unlocked,
            terminated_at,
            rng,
            view_order,
            view_cursor,
            grad_accum,
            grad_count,
        },
        env,
        reflective_history,
    })
}

/// Paths of the three checkpoint files for a `.ply` path (or bare stem).
pub fn checkpoint_paths(ply: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let ply = ply.with_extension("ply");
    let stem = ply.with_extension("");
    let with = |suffix: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(suffix);
        PathBuf::from(s)
    };
    (ply, with(".env.pfm"), with(".state.bin"))
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    let (ply, env, state) = checkpoint_paths(path);
    if let Some(dir) = ply.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(&ply, encode_ply(&ck.cloud)).map_err(|e| Error::io(&ply, e))?;
    pfm::write(&env, &pfm::from_f64(ck.env.width, ck.env.height, &ck.env.texels))?;
    std::fs::write(&state, encode_state(ck)).map_err(|e| Error::io(&state, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let (ply, _, state) = checkpoint_paths(path);
    let bytes = std::fs::read(&ply).map_err(|e| Error::io(&ply, e))?;
    let mut cloud = decode_ply(&bytes, &ply)?;
    let bytes = std::fs::read(&state).map_err(|e| Error::io(&state, e))?;
    let d = decode_state(&bytes, &state)?;
    let n = cloud.len();
    let s = &d.state;
    if s.moments.len() != n * crate::gaussian::param::COUNT || s.grad_accum.len() != n || s.grad_count.len() != n {
        return Err(Error::parse(&state, format!("optimizer state does not match {n} Gaussians")));
    }
    if s.env_moments.len() != d.env.texels.len() * 3 {
        return Err(Error::parse(&state, "environment moments do not match the map"));
    }
    cloud.domain = d.config.domain();
    Ok(Checkpoint {
        config: d.config,
        cloud,
        env: d.env,
        state: d.state,
        reflective_history: d.reflective_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::param;
    use rand::{Rng, RngCore};

    fn sample() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gaussians: Vec<Gaussian> = (0..5)
            .map(|_| {
                let mut p = [0.0; param::COUNT];
                p.iter_mut().for_each(|x| *x = rng.gen_range(-2.0..2.0));
                Gaussian::from_params(&p)
            })
            .collect();
        let cloud = GaussianCloud::new(gaussians);
        let env = EnvironmentMap::new(2, 4, (0..8).map(|i| [i as f64 / 7.0, 0.1, 1.0 / 3.0]).collect()).unwrap();
        let mut state = TrainState::new(5, 8, 4);
        state.iteration = 77;
        state.stage = Stage::Reflection;
        state.moments.m[3] = 0.25;
        state.env_moments.v[1] = 1e-9;
        state.group_steps[2] = 70;
        state.terminated_at = Some(50);
        state.view_order = vec![2, 0, 1];
        state.view_cursor = 1;
        state.grad_count[4] = 3;
        state.rng.next_u64();
        Checkpoint {
            config: TrainConfig::default(),
            cloud,
            env,
            state,
            reflective_history: vec![(10, 4), (20, 3)],
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        let p = dir.path().join("ck/model.ply");
        save(&p, &ck).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back.cloud.gaussians, ck.cloud.gaussians);
        assert_eq!(back.env, ck.env);
        assert_eq!(back.state.moments, ck.state.moments);
        assert_eq!(back.state.env_moments, ck.state.env_moments);
        assert_eq!(back.state.group_steps, ck.state.group_steps);
        assert_eq!(back.state.terminated_at, Some(50));
        assert_eq!(back.state.view_order, ck.state.view_order);
        assert_eq!(back.reflective_history, ck.reflective_history);
        assert_eq!(back.config, ck.config);
        let mut orig_rng = ck.state.rng.clone();
        assert_eq!(back.state.rng.clone().next_u64(), orig_rng.next_u64());
        assert!(dir.path().join("ck/model.env.pfm").exists());
        // Saving again reproduces the same bytes.
        let p2 = dir.path().join("again.ply");
        save(&p2, &back).unwrap();
        for (a, b) in [("ck/model.ply", "again.ply"), ("ck/model.state.bin", "again.state.bin")] {
            assert_eq!(std::fs::read(dir.path().join(a)).unwrap(), std::fs::read(dir.path().join(b)).unwrap());
        }
    }

    #[test]
    fn wrong_version_is_a_version_error() {
        let mut bytes = encode_ply(&sample().cloud);
        let at = bytes.windows(16).position(|w| w == b"format_version 1").unwrap();
        bytes[at + 15] = b'2';
        assert!(matches!(decode_ply(&bytes, Path::new("x.ply")), Err(Error::Version { .. })));

        let mut st = encode_state(&sample());
        st[8] = 9;
        assert!(matches!(decode_state(&st, Path::new("x")), Err(Error::Version { .. })));
    }

    #[test]
    fn truncation_is_a_parse_error() {
        let ck = sample();
        let ply = encode_ply(&ck.cloud);
        assert!(matches!(decode_ply(&ply[..ply.len() - 3], Path::new("x")), Err(Error::Parse { .. })));
        let st = encode_state(&ck);
        for cut in [4, 40, st.len() / 2, st.len() - 1] {
            assert!(matches!(decode_state(&st[..cut], Path::new("x")), Err(Error::Parse { .. })), "cut {cut}");
        }
    }

    #[test]
    fn ply_layout_is_channel_major() {
        let names = property_names();
        assert_eq!(names.len(), param::COUNT);
        let mut g = Gaussian::default();
        g.sh[2][1] = 7.0;
        let v = gaussian_values(&g);
        let idx = names.iter().position(|n| n == "f_rest_16").unwrap();
        assert_eq!(v[idx], 7.0);
    }
}
