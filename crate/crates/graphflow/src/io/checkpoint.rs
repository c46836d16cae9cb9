//! `GFCK` checkpoints: the named parameter table plus whatever a resumed
//! run needs to continue bit-exactly.
//!
//! RNG streams are derived from (seed, step), so persisting those two
//! integers restores the full draw state.

use std::path::Path;

use super::binary::{Reader, Writer};
use crate::tensor::{AdamWState, ParamSet, Tensor};
use crate::{Error, Result};

pub const CKPT_MAGIC: &[u8; 4] = b"GFCK";
pub const CKPT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// What the parameters are for: "layout", "shape", "texture",
    /// "shape-codec", "texture-codec".
    pub branch: String,
    /// Hash of the canonical config text; guards against mixing runs.
    pub fingerprint: u64,
    /// The full config document the run was launched with.
    pub config_text: String,
    pub seed: u64,
    pub step: u64,
    pub params: ParamSet,
    pub opt: Option<AdamWState>,
}

/// FNV-1a over the exact bytes.
pub fn fingerprint(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn put_tensor(w: &mut Writer, t: &Tensor) {
    w.u32(t.shape.len() as u32);
    for d in &t.shape {
        w.u32(*d as u32);
    }
    for v in &t.data {
        w.f64(*v);
    }
}

fn get_tensor(r: &mut Reader) -> Result<Tensor> {
    let rank = r.u32()? as usize;
    if rank > 8 {
        return Err(Error::Parse(format!("checkpoint: implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32()? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    for _ in 0..numel {
        data.push(r.f64()?);
    }
    Tensor::new(shape, data)
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(CKPT_MAGIC);
    w.u32(CKPT_VERSION);
    w.str(&ck.branch);
    w.u64(ck.fingerprint);
    w.str(&ck.config_text);
    w.u64(ck.seed);
    w.u64(ck.step);
    w.u32(ck.params.len() as u32);
    for (_, name, t) in ck.params.iter() {
        w.str(name);
        put_tensor(&mut w, t);
    }
    match &ck.opt {
        None => w.u8(0),
        Some(st) => {
            w.u8(1);
            w.u64(st.step);
            w.u32(st.m.len() as u32);
            for t in &st.m {
                put_tensor(&mut w, t);
            }
            for t in &st.v {
                put_tensor(&mut w, t);
            }
        }
    }
    w.finish()
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(buf, "checkpoint");
    r.magic(CKPT_MAGIC)?;
    r.version(CKPT_VERSION)?;
    let branch = r.str()?;
    let fp = r.u64()?;
    let config_text = r.str()?;
    let seed = r.u64()?;
    let step = r.u64()?;
    let count = r.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = r.str()?;
        let t = get_tensor(&mut r)?;
        params.add(&name, t)?;
    }
    let opt = match r.u8()? {
        0 => None,
        1 => {
            let ostep = r.u64()?;
            let n = r.u32()? as usize;
            if n != count {
                return Err(Error::Parse(format!(
                    "checkpoint: optimizer tracks {n} tensors, model has {count}"
                )));
            }
            let mut m = Vec::with_capacity(n);
            for _ in 0..n {
                m.push(get_tensor(&mut r)?);
            }
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                v.push(get_tensor(&mut r)?);
            }
            Some(AdamWState { m, v, step: ostep })
        }
        other => {
            return Err(Error::Parse(format!("checkpoint: bad optimizer flag {other}")))
        }
    };
    r.finish()?;
    Ok(Checkpoint { branch, fingerprint: fp, config_text, seed, step, params, opt })
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf).map_err(|e| match e {
        Error::Parse(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Fingerprint guard shared by every command that loads checkpoints
/// against a config. `force` downgrades the mismatch to acceptance.
pub fn check_fingerprint(ck: &Checkpoint, expected: u64, force: bool) -> Result<()> {
    if ck.fingerprint != expected && !force {
        return Err(Error::Validation {
            rule: "config-fingerprint".into(),
            detail: format!(
                "checkpoint was written with a different config \
                 ({:016x} vs {:016x}); rerun with --force to override",
                ck.fingerprint, expected
            ),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{AdamW, Rng};

    fn sample_params() -> ParamSet {
        let mut ps = ParamSet::new();
        let mut rng = Rng::new(3, 3);
        ps.add_linear("a.l0", &mut rng, 3, 4).unwrap();
        ps.add_linear("b.l1", &mut rng, 4, 2).unwrap();
        ps.add("odd", Tensor::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 3e300]).unwrap())
            .unwrap();
        ps
    }

    #[test]
    fn round_trip_is_bitwise() {
        let params = sample_params();
        let opt = AdamW::new(&params, 0.01);
        let ck = Checkpoint {
            branch: "layout".into(),
            fingerprint: fingerprint("config"),
            config_text: "config".into(),
            seed: 11,
            step: 230,
            params,
            opt: Some(opt.state),
        };
        let back = decode_checkpoint(&encode_checkpoint(&ck)).unwrap();
        assert_eq!(back.branch, "layout");
        assert_eq!(back.seed, 11);
        assert_eq!(back.step, 230);
        assert_eq!(back.fingerprint, ck.fingerprint);
        assert_eq!(back.params.checksum(), ck.params.checksum());
        for (id, name, t) in ck.params.iter() {
            assert_eq!(back.params.name(id), name);
            let a: Vec<u64> = t.data.iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.params.value(id).data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "{name}");
        }
        let bopt = back.opt.unwrap();
        assert_eq!(bopt.step, 0);
        assert_eq!(bopt.m.len(), ck.params.len());
    }

    #[test]
    fn fingerprint_mismatch_is_refused_unless_forced() {
        let ck = Checkpoint {
            branch: "layout".into(),
            fingerprint: fingerprint("old"),
            config_text: "old".into(),
            seed: 0,
            step: 0,
            params: sample_params(),
            opt: None,
        };
        let new = fingerprint("new");
        assert!(check_fingerprint(&ck, new, false).is_err());
        check_fingerprint(&ck, new, true).unwrap();
        check_fingerprint(&ck, fingerprint("old"), false).unwrap();
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let ck = Checkpoint {
            branch: "shape-codec".into(),
            fingerprint: 5,
            config_text: String::new(),
            seed: 1,
            step: 2,
            params: sample_params(),
            opt: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gfck");
        save_checkpoint(&path, &ck).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.params.checksum(), ck.params.checksum());
        let mut bytes = encode_checkpoint(&ck);
        bytes.truncate(bytes.len() - 1);
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("m.gfck"), "{err}");
    }
}
