//! Synthetic workload generators and the MPWL binary workload format.
//!
//! Three generator families cover the geometries the estimators care
//! about: `gaussian` (isotropic baseline), `cone` (keys concentrated in a
//! narrow directional cone, optionally with a lone sink key pointing the
//! opposite way), and `longtail` (attention mass concentrated on a small
//! token fraction, with values coupled to weights so truncation bias is
//! visible).

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::attention::AttentionWorkload;
use crate::error::{Error, Result};

/// Value-generation constants for the longtail kind: values follow
/// `(1 + VALUE_GAIN * z_i)` plus `VALUE_NOISE`-scaled noise, where `z_i`
/// is the token's score variable. The coupling makes high-weight tokens
/// carry systematically different values, so estimators that truncate the
/// tail pay a bias, not just variance.
const LONGTAIL_VALUE_GAIN: f64 = 1.0;
const LONGTAIL_VALUE_NOISE: f64 = 0.5;

/// Noise scale added on top of the key direction when generating cone
/// values; keeps values correlated with keys the way trained projections
/// tend to be, so relative errors stay meaningful.
const CONE_VALUE_NOISE: f64 = 0.3;

/// Which synthetic family (or file) to draw a workload from.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadKind {
    Gaussian,
    /// Unit keys spread over angles `U(0, angle)` around a random mean
    /// direction; the query sits inside the cone at half the angle. With
    /// `sink_flip`, key 0 is moved to the antipode of the mean direction,
    /// mimicking a sink token.
    Cone {
        angle: f64,
        sink_flip: bool,
    },
    /// Scores are `s * z_i` with `z_i` standard normal and `s` bisected so
    /// the top 20% of tokens hold `top20_mass` of the softmax mass.
    /// The temperature field is ignored: the bisected scale subsumes it.
    Longtail {
        top20_mass: f64,
    },
    File {
        path: PathBuf,
    },
}

/// Parameters of one generated workload.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub n: usize,
    pub d: usize,
    /// Divides the query, sharpening (temperature < 1 is not special;
    /// smaller values concentrate the softmax). Must be positive.
    pub temperature: f64,
    pub seed: u64,
}

/// Generates the workload as a pure function of `spec`, seeded by
/// `spec.seed`.
pub fn gen_workload(spec: &WorkloadSpec) -> Result<AttentionWorkload> {
    if let WorkloadKind::File { path } = &spec.kind {
        return read_workload(path);
    }
    if spec.n == 0 || spec.d == 0 {
        return Err(Error::InvalidInput(format!(
            "workload requires n >= 1 and d >= 1, got n={}, d={}",
            spec.n, spec.d
        )));
    }
    if !(spec.temperature.is_finite() && spec.temperature > 0.0) {
        return Err(Error::InvalidInput(format!(
            "temperature must be positive and finite, got {}",
            spec.temperature
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match &spec.kind {
        WorkloadKind::Gaussian => gen_gaussian(spec, &mut rng),
        WorkloadKind::Cone { angle, sink_flip } => gen_cone(spec, *angle, *sink_flip, &mut rng),
        WorkloadKind::Longtail { top20_mass } => gen_longtail(spec, *top20_mass, &mut rng),
        WorkloadKind::File { .. } => unreachable!("handled above"),
    }
}

fn normals(rng: &mut ChaCha8Rng, count: usize) -> Vec<f64> {
    (0..count).map(|_| rng.sample(StandardNormal)).collect()
}

/// Draw order: query, then keys row-major, then values row-major.
fn gen_gaussian(spec: &WorkloadSpec, rng: &mut ChaCha8Rng) -> Result<AttentionWorkload> {
    let mut q = normals(rng, spec.d);
    for x in &mut q {
        *x /= spec.temperature;
    }
    let keys = normals(rng, spec.n * spec.d);
    let values = normals(rng, spec.n * spec.d);
    AttentionWorkload::new(q, keys, values, spec.n, spec.d)
}

/// A random unit vector orthogonal to `axis`, redrawn in the
/// measure-zero case where the perpendicular component vanishes.
fn unit_orthogonal(rng: &mut ChaCha8Rng, axis: &[f64]) -> Vec<f64> {
    loop {
        let mut v = normals(rng, axis.len());
        let along = crate::attention::dot(&v, axis);
        for (x, &a) in v.iter_mut().zip(axis) {
            *x -= along * a;
        }
        let norm = crate::attention::l2_norm(&v);
        if norm > 1e-12 {
            for x in &mut v {
                *x /= norm;
            }
            return v;
        }
    }
}

/// Draw order: mean direction, then per-key (angle, orthogonal direction),
/// then the query's orthogonal direction, then values row-major.
fn gen_cone(
    spec: &WorkloadSpec,
    angle: f64,
    sink_flip: bool,
    rng: &mut ChaCha8Rng,
) -> Result<AttentionWorkload> {
    if !(angle.is_finite() && angle > 0.0 && angle < std::f64::consts::PI) {
        return Err(Error::InvalidInput(format!(
            "cone angle must lie in (0, pi), got {angle}"
        )));
    }
    if spec.d < 2 {
        return Err(Error::InvalidInput(
            "cone workloads need d >= 2 to have a nontrivial cone".into(),
        ));
    }
    let mut mu = normals(rng, spec.d);
    let mu_norm = crate::attention::l2_norm(&mu);
    if mu_norm == 0.0 {
        // Probability zero; retry deterministically from the stream.
        mu = unit_orthogonal(rng, &vec![0.0; spec.d]);
    } else {
        for x in &mut mu {
            *x /= mu_norm;
        }
    }

    let mut keys = Vec::with_capacity(spec.n * spec.d);
    for _ in 0..spec.n {
        let phi: f64 = rng.random::<f64>() * angle;
        let eta = unit_orthogonal(rng, &mu);
        let (c, s) = (phi.cos(), phi.sin());
        keys.extend(mu.iter().zip(&eta).map(|(&m, &e)| c * m + s * e));
    }
    if sink_flip {
        for (slot, &m) in keys[..spec.d].iter_mut().zip(&mu) {
            *slot = -m;
        }
    }

    let psi = angle / 2.0;
    let eta_q = unit_orthogonal(rng, &mu);
    let scale = (spec.d as f64).sqrt() / spec.temperature;
    let q: Vec<f64> = mu
        .iter()
        .zip(&eta_q)
        .map(|(&m, &e)| (psi.cos() * m + psi.sin() * e) * scale)
        .collect();

    let noise = normals(rng, spec.n * spec.d);
    let values: Vec<f64> = keys
        .iter()
        .zip(&noise)
        .map(|(&k, &g)| k + CONE_VALUE_NOISE * g)
        .collect();
    AttentionWorkload::new(q, keys, values, spec.n, spec.d)
}

/// Draw order: score variables `z`, then the non-score key columns
/// row-major, then value noise row-major.
fn gen_longtail(
    spec: &WorkloadSpec,
    top20_mass: f64,
    rng: &mut ChaCha8Rng,
) -> Result<AttentionWorkload> {
    if !(0.25..=0.99).contains(&top20_mass) {
        return Err(Error::InvalidInput(format!(
            "top20_mass must lie in [0.25, 0.99], got {top20_mass}"
        )));
    }
    let z = normals(rng, spec.n);
    let scale = bisect_longtail_scale(&z, top20_mass);

    let mut keys = Vec::with_capacity(spec.n * spec.d);
    for &zi in &z {
        keys.push(scale * zi);
        keys.extend(normals(rng, spec.d - 1));
    }
    // q = sqrt(d) * e1 makes the scaled logit q.k/sqrt(d) equal the score
    // column exactly.
    let mut q = vec![0.0; spec.d];
    q[0] = (spec.d as f64).sqrt();

    let noise = normals(rng, spec.n * spec.d);
    let mut values = Vec::with_capacity(spec.n * spec.d);
    for (i, &zi) in z.iter().enumerate() {
        let base = 1.0 + LONGTAIL_VALUE_GAIN * zi;
        for c in 0..spec.d {
            values.push(base + LONGTAIL_VALUE_NOISE * noise[i * spec.d + c]);
        }
    }
    AttentionWorkload::new(q, keys, values, spec.n, spec.d)
}

/// Smallest scale `s` such that softmax(s * z) puts `target` mass on the
/// top 20% of tokens. The mass is continuous and nondecreasing in `s`, so
/// bisection converges; 80 halvings push the interval far below f64
/// resolution.
fn bisect_longtail_scale(z: &[f64], target: f64) -> f64 {
    let n = z.len();
    let top = ((n as f64) * 0.2).round().max(1.0) as usize;
    let mut sorted = z.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    let mass = |s: f64| {
        let shift = s * sorted[0];
        let mut head = 0.0;
        let mut total = 0.0;
        for (i, &zi) in sorted.iter().enumerate() {
            let w = (s * zi - shift).exp();
            total += w;
            if i < top {
                head += w;
            }
        }
        head / total
    };
    let (mut lo, mut hi) = (0.0f64, 50.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

const WORKLOAD_MAGIC: &[u8; 4] = b"MPWL";
const WORKLOAD_VERSION: u16 = 1;

/// Writes the MPWL binary format: magic `MPWL`, u16 version, u32 n, u32
/// d, then f32 `q[d]`, f32 keys row-major, f32 values row-major, all
/// little-endian. Entries are narrowed from f64 to f32.
pub fn write_workload(workload: &AttentionWorkload, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut writer = std::io::BufWriter::new(file);
    write_workload_to(workload, &mut writer)
}

pub fn write_workload_to(workload: &AttentionWorkload, writer: &mut impl Write) -> Result<()> {
    writer.write_all(WORKLOAD_MAGIC)?;
    writer.write_all(&WORKLOAD_VERSION.to_le_bytes())?;
    writer.write_all(&(workload.n() as u32).to_le_bytes())?;
    writer.write_all(&(workload.d() as u32).to_le_bytes())?;
    for block in [
        workload.query(),
        workload.keys_flat(),
        workload.values_flat(),
    ] {
        for &x in block {
            writer.write_all(&(x as f32).to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Reads an MPWL file back into f64 storage.
pub fn read_workload(path: impl AsRef<Path>) -> Result<AttentionWorkload> {
    let bytes = std::fs::read(path)?;
    read_workload_from(&bytes)
}

pub fn read_workload_from(bytes: &[u8]) -> Result<AttentionWorkload> {
    let header_len = 14;
    if bytes.len() < header_len {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            message: format!(
                "truncated header: expected at least {header_len} bytes, found {}",
                bytes.len()
            ),
        });
    }
    if &bytes[0..4] != WORKLOAD_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {:?}, expected {WORKLOAD_MAGIC:?}", &bytes[0..4]),
        });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != WORKLOAD_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}, expected {WORKLOAD_VERSION}"),
        });
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as u64;
    let d = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as u64;
    if n == 0 || d == 0 {
        return Err(Error::Format {
            offset: 6,
            message: format!("header requires n >= 1 and d >= 1, got n={n}, d={d}"),
        });
    }
    let floats = d + 2 * n * d;
    let expected = header_len as u64 + 4 * floats;
    if bytes.len() as u64 != expected {
        return Err(Error::Format {
            offset: (bytes.len() as u64).min(expected),
            message: format!(
                "payload length mismatch: expected {expected} bytes total, found {}",
                bytes.len()
            ),
        });
    }
    let mut values = Vec::with_capacity(floats as usize);
    for chunk in bytes[header_len..].chunks_exact(4) {
        values.push(f64::from(f32::from_le_bytes(chunk.try_into().unwrap())));
    }
    let d = d as usize;
    let n = n as usize;
    let q = values[..d].to_vec();
    let keys = values[d..d + n * d].to_vec();
    let vals = values[d + n * d..].to_vec();
    AttentionWorkload::new(q, keys, vals, n, d)
}

/// Reads an MPWL stream (for callers that already hold a reader).
pub fn read_workload_reader(reader: &mut impl Read) -> Result<AttentionWorkload> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    read_workload_from(&bytes)
}
