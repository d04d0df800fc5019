//! Checkpoint serialization for policies and value networks.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! magic       8 bytes  "UVMCKPT\0"
//! version     u32      format version (1)
//! ordering    u32      latent ordering tag (1 = level-major vine pairs)
//! family      u8       0 = continuous, 1 = bang-bang
//! step        u32      time-step index the networks belong to
//! temperature f64      latent temperature (continuous family; 0 otherwise)
//! actor       Mlp
//! critic      Mlp
//! ```
//!
//! where `Mlp` is `in u32, hidden u32, out u32` followed by the flat f64
//! arrays `w1, b1, ln_gain, ln_bias, w2, b2, input_shift, input_scale`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, UvmError};
use crate::model::ModelSpec;
use crate::neural::MlpParams;
use crate::payoffs::PayoffSpec;
use crate::policy::{BernoulliPolicyState, GaussianPolicyState, PolicyFamily, PolicyState};
use crate::trainer::{StepArtifacts, TrainedModel};

const MAGIC: &[u8; 8] = b"UVMCKPT\0";
const VERSION: u32 = 1;
/// Tag for the latent coordinate ordering: volatilities first, then vine
/// partial correlations level-major, pairs lexicographic within a level.
const ORDERING_LEVEL_MAJOR: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_array(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    for &x in xs {
        write_f64(w, x)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

fn read_array(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    for v in out.iter_mut() {
        *v = read_f64(r)?;
    }
    Ok(out)
}

fn write_mlp(w: &mut impl Write, p: &MlpParams) -> Result<()> {
    write_u32(w, p.in_dim as u32)?;
    write_u32(w, p.hidden_dim as u32)?;
    write_u32(w, p.out_dim as u32)?;
    write_array(w, &p.w1)?;
    write_array(w, &p.b1)?;
    write_array(w, &p.ln_gain)?;
    write_array(w, &p.ln_bias)?;
    write_array(w, &p.w2)?;
    write_array(w, &p.b2)?;
    write_array(w, &p.input_shift)?;
    write_array(w, &p.input_scale)?;
    Ok(())
}

fn read_mlp(r: &mut impl Read) -> Result<MlpParams> {
    let in_dim = read_u32(r)? as usize;
    let hidden_dim = read_u32(r)? as usize;
    let out_dim = read_u32(r)? as usize;
    if in_dim == 0 || hidden_dim == 0 || out_dim == 0 || in_dim > 1 << 20 || hidden_dim > 1 << 20 {
        return Err(UvmError::Checkpoint("implausible network dimensions".into()));
    }
    Ok(MlpParams {
        in_dim,
        hidden_dim,
        out_dim,
        w1: read_array(r, hidden_dim * in_dim)?,
        b1: read_array(r, hidden_dim)?,
        ln_gain: read_array(r, hidden_dim)?,
        ln_bias: read_array(r, hidden_dim)?,
        w2: read_array(r, out_dim * hidden_dim)?,
        b2: read_array(r, out_dim)?,
        input_shift: read_array(r, in_dim)?,
        input_scale: read_array(r, in_dim)?,
    })
}

/// Write one step's actor and critic to a checkpoint file.
pub fn save_step(path: &Path, step: usize, actor: &PolicyState, critic: &MlpParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_u32(&mut w, ORDERING_LEVEL_MAJOR)?;
    let (family, temperature) = match actor {
        PolicyState::Gaussian(g) => (0u8, g.temperature),
        PolicyState::Bernoulli(_) => (1u8, 0.0),
    };
    w.write_all(&[family])?;
    write_u32(&mut w, step as u32)?;
    write_f64(&mut w, temperature)?;
    write_mlp(&mut w, actor.network())?;
    write_mlp(&mut w, critic)?;
    w.flush()?;
    Ok(())
}

/// Read one step checkpoint back.
pub fn load_step(path: &Path) -> Result<(usize, PolicyState, MlpParams)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(UvmError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(UvmError::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let ordering = read_u32(&mut r)?;
    if ordering != ORDERING_LEVEL_MAJOR {
        return Err(UvmError::Checkpoint(format!(
            "unsupported latent ordering tag {ordering}"
        )));
    }
    let mut family = [0u8; 1];
    r.read_exact(&mut family)?;
    let step = read_u32(&mut r)? as usize;
    let temperature = read_f64(&mut r)?;
    let net = read_mlp(&mut r)?;
    let critic = read_mlp(&mut r)?;
    let actor = match family[0] {
        0 => PolicyState::Gaussian(GaussianPolicyState {
            mean_net: net,
            temperature,
        }),
        1 => PolicyState::Bernoulli(BernoulliPolicyState { logit_net: net }),
        other => {
            return Err(UvmError::Checkpoint(format!(
                "unknown policy family tag {other}"
            )))
        }
    };
    Ok((step, actor, critic))
}

fn step_path(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("step_{step:04}.ckpt"))
}

/// Write every step of a trained model into `dir` (one file per step).
pub fn save_model(dir: &Path, model: &TrainedModel) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (n, step) in model.steps.iter().enumerate() {
        save_step(&step_path(dir, n), n, &step.actor, &step.critic)?;
    }
    Ok(())
}

/// Rebuild a trained model from per-step checkpoints. The model
/// specification, payoff, family and seed are provided by the caller (they
/// live in the experiment configuration); learning curves are not stored.
pub fn load_model(
    dir: &Path,
    spec: ModelSpec,
    payoff: PayoffSpec,
    family: PolicyFamily,
    seed: u64,
) -> Result<TrainedModel> {
    let mut steps = Vec::with_capacity(spec.steps);
    for n in 0..spec.steps {
        let (step, actor, critic) = load_step(&step_path(dir, n))?;
        if step != n {
            return Err(UvmError::Checkpoint(format!(
                "checkpoint {n} carries step index {step}"
            )));
        }
        if actor.family() != family {
            return Err(UvmError::Checkpoint("policy family mismatch".into()));
        }
        steps.push(StepArtifacts {
            actor,
            critic,
            curve: Vec::new(),
        });
    }
    Ok(TrainedModel {
        spec,
        payoff,
        family,
        seed,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CorrMode;
    use crate::rng::{stream, Domain};

    #[test]
    fn step_round_trip_is_bit_exact() {
        let spec = ModelSpec::uniform(
            3,
            100.0,
            0.0,
            1.0,
            4,
            0.1,
            0.2,
            -0.5,
            0.5,
            CorrMode::Uncertain,
        )
        .unwrap();
        let mut rng = stream(41, Domain::Check { case: 60 });
        let actor = PolicyState::Gaussian(
            GaussianPolicyState::init(&spec, 3, 8, 0.37, &mut rng).unwrap(),
        );
        let critic = MlpParams::init_random(3, 8, 1, &mut rng);
        let dir = std::env::temp_dir().join(format!("uvm-ckpt-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("step_0000.ckpt");
        save_step(&path, 0, &actor, &critic).unwrap();
        let (step, actor2, critic2) = load_step(&path).unwrap();
        assert_eq!(step, 0);
        assert_eq!(critic, critic2);
        match (&actor, &actor2) {
            (PolicyState::Gaussian(a), PolicyState::Gaussian(b)) => {
                assert_eq!(a.mean_net, b.mean_net);
                assert_eq!(a.temperature, b.temperature);
            }
            _ => panic!("family changed in round trip"),
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rejects_corrupted_headers() {
        let dir = std::env::temp_dir().join(format!("uvm-ckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"NOTACKPT________").unwrap();
        assert!(load_step(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
