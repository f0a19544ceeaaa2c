//! Everything the training loop owns, and its mapping onto the checkpoint
//! container: live generator, discriminator, averaged generator, both
//! optimizers, and the step counter. Restoring a file and continuing
//! reproduces the uninterrupted run bit for bit, because every persistent
//! tensor — weights, spectral-norm u vectors, batch-norm running statistics,
//! Adam moments — rides along and all per-step randomness is keyed by the
//! step index rather than carried state.
//!
//! Tensor names are `{section}/{slot}` with sections `g`, `d`, `ema`,
//! `adam_g`, `adam_d`. Batch-norm sites add `.mean`, `.var` and a two-element
//! `.flags` of [ready, accumulation passes].

use std::path::Path;

use sigl_core::net::{Discriminator, Generator, NetworkConfig};
use sigl_core::params::SlotKind;
use sigl_core::rng::{Domain, StreamRng};
use sigl_core::scalar::Real;
use sigl_core::train::{Adam, TrainConfig};

use crate::ckpt::{
    read_checkpoint, write_checkpoint, CkptError, Dtype, Header, Meta, NamedTensor, TensorData,
};

/// Scalars that know their on-disk representation. Keeping the payload in
/// the model's own precision makes save → load the identity on bits.
pub trait CkptScalar: Real {
    const DTYPE: Dtype;
    fn wrap(v: Vec<Self>) -> TensorData;
    fn unwrap(d: &TensorData) -> Option<Vec<Self>>;
}

impl CkptScalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn wrap(v: Vec<Self>) -> TensorData {
        TensorData::F32(v)
    }
    fn unwrap(d: &TensorData) -> Option<Vec<Self>> {
        match d {
            TensorData::F32(v) => Some(v.clone()),
            TensorData::F64(_) => None,
        }
    }
}

impl CkptScalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn wrap(v: Vec<Self>) -> TensorData {
        TensorData::F64(v)
    }
    fn unwrap(d: &TensorData) -> Option<Vec<Self>> {
        match d {
            TensorData::F64(v) => Some(v.clone()),
            TensorData::F32(_) => None,
        }
    }
}

#[derive(Debug)]
pub enum StateError {
    Ckpt(CkptError),
    Core(sigl_core::error::Error),
    /// The file is structurally fine but does not describe this model.
    Mismatch(String),
}

impl std::fmt::Display for StateError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StateError::Ckpt(e) => write!(f, "{e}"),
            StateError::Core(e) => write!(f, "{e}"),
            StateError::Mismatch(s) => write!(f, "checkpoint mismatch: {s}"),
        }
    }
}

impl std::error::Error for StateError {}

impl From<CkptError> for StateError {
    fn from(e: CkptError) -> Self {
        StateError::Ckpt(e)
    }
}

impl From<sigl_core::error::Error> for StateError {
    fn from(e: sigl_core::error::Error) -> Self {
        StateError::Core(e)
    }
}

pub struct TrainState<R> {
    pub net_cfg: NetworkConfig,
    pub train_cfg: TrainConfig,
    /// Hash seed of the text encoder this model conditions on.
    pub encoder_seed: u64,
    /// Steps completed so far.
    pub step: u64,
    pub g: Generator<R>,
    pub d: Discriminator<R>,
    pub g_ema: Generator<R>,
    pub adam_g: Adam<R>,
    pub adam_d: Adam<R>,
}

impl<R: CkptScalar> TrainState<R> {
    /// Fresh state: G from init stream 0, D from stream 1, and the averaged
    /// generator replays stream 0 so it starts as an exact copy of G.
    pub fn init(
        net_cfg: NetworkConfig,
        train_cfg: TrainConfig,
        encoder_seed: u64,
    ) -> Result<Self, StateError> {
        train_cfg.validate()?;
        let seed = train_cfg.seed;
        let g = Generator::new(net_cfg, &mut StreamRng::new(seed, Domain::ParamInit, 0))?;
        let d = Discriminator::new(net_cfg, &mut StreamRng::new(seed, Domain::ParamInit, 1))?;
        let g_ema = Generator::new(net_cfg, &mut StreamRng::new(seed, Domain::ParamInit, 0))?;
        Ok(TrainState {
            net_cfg,
            train_cfg,
            encoder_seed,
            step: 0,
            g,
            d,
            g_ema,
            adam_g: Adam::new(train_cfg.adam_g()),
            adam_d: Adam::new(train_cfg.adam_d()),
        })
    }

    fn header(&self) -> Header {
        Header {
            meta: Meta::Train {
                net: self.net_cfg.into(),
                train: self.train_cfg.into(),
                step: self.step,
                adam_g_t: self.adam_g.t,
                adam_d_t: self.adam_d.t,
                encoder_seed: self.encoder_seed,
            },
            tensors: Vec::new(),
        }
    }

    pub fn save(&mut self, path: &Path) -> Result<(), StateError> {
        let header = self.header();
        let mut tensors = Vec::new();
        collect_net(&mut tensors, "g", &mut self.g);
        collect_slots(&mut tensors, "d", &mut self.d.slots());
        collect_net(&mut tensors, "ema", &mut self.g_ema);
        collect_adam(&mut tensors, "adam_g", &self.adam_g, &self.g.slots())?;
        collect_adam(&mut tensors, "adam_d", &self.adam_d, &self.d.slots())?;
        write_checkpoint(path, header, &tensors)?;
        Ok(())
    }

    /// Rebuild the full state from a file. Strict: a tensor the model does
    /// not expect, or an expected tensor that is absent, malformed or of the
    /// wrong precision, fails the load.
    pub fn load(path: &Path) -> Result<Self, StateError> {
        let loaded = read_checkpoint(path)?;
        let Meta::Train {
            net,
            train,
            step,
            adam_g_t,
            adam_d_t,
            encoder_seed,
        } = loaded.header.meta
        else {
            return Err(StateError::Mismatch(
                "file holds a classifier, not training state".into(),
            ));
        };
        let net_cfg: NetworkConfig = net.into();
        let train_cfg: TrainConfig = train.into();
        let mut state = TrainState::init(net_cfg, train_cfg, encoder_seed)?;
        state.step = step;

        let mut pool: std::collections::BTreeMap<String, NamedTensor> = loaded.tensors;
        restore_net(&mut pool, "g", &mut state.g)?;
        restore_slots(&mut pool, "d", &mut state.d.slots())?;
        restore_net(&mut pool, "ema", &mut state.g_ema)?;
        state.adam_g = restore_adam(
            &mut pool,
            "adam_g",
            train_cfg.adam_g(),
            adam_g_t,
            &state.g.slots(),
        )?;
        state.adam_d = restore_adam(
            &mut pool,
            "adam_d",
            train_cfg.adam_d(),
            adam_d_t,
            &state.d.slots(),
        )?;

        if let Some((name, _)) = pool.iter().next() {
            return Err(StateError::Mismatch(format!(
                "unknown tensor {name} (and {} more)",
                pool.len() - 1
            )));
        }
        Ok(state)
    }
}

/// Persist a trained surrogate classifier in the same container format.
pub fn save_classifier<R: CkptScalar>(
    path: &Path,
    clf: &mut sigl_core::metrics::Classifier<R>,
    seed: u64,
) -> Result<(), StateError> {
    let header = Header {
        meta: Meta::Classifier {
            classes: clf.cfg.classes,
            features: clf.cfg.features,
            leaky_slope: clf.cfg.leaky_slope,
            seed,
        },
        tensors: Vec::new(),
    };
    let mut tensors = Vec::new();
    collect_slots(&mut tensors, "clf", &mut clf.slots());
    write_checkpoint(path, header, &tensors)?;
    Ok(())
}

pub fn load_classifier<R: CkptScalar>(
    path: &Path,
) -> Result<sigl_core::metrics::Classifier<R>, StateError> {
    let loaded = read_checkpoint(path)?;
    let Meta::Classifier {
        classes,
        features,
        leaky_slope,
        seed,
    } = loaded.header.meta
    else {
        return Err(StateError::Mismatch(
            "file holds training state, not a classifier".into(),
        ));
    };
    let cfg = sigl_core::metrics::ClassifierConfig {
        classes,
        features,
        leaky_slope,
        ..Default::default()
    };
    let mut clf = sigl_core::metrics::Classifier::init(cfg, seed);
    let mut pool: std::collections::BTreeMap<String, NamedTensor> = loaded.tensors;
    restore_slots(&mut pool, "clf", &mut clf.slots())?;
    if let Some((name, _)) = pool.iter().next() {
        return Err(StateError::Mismatch(format!(
            "unknown tensor {name} (and {} more)",
            pool.len() - 1
        )));
    }
    Ok(clf)
}

fn collect_slots<R: CkptScalar>(
    out: &mut Vec<NamedTensor>,
    section: &str,
    slots: &mut [sigl_core::params::Slot<'_, R>],
) {
    for s in slots {
        out.push(NamedTensor::new(
            format!("{section}/{}", s.name),
            s.shape.clone(),
            R::wrap(s.data.to_vec()),
        ));
    }
}

fn collect_net<R: CkptScalar>(out: &mut Vec<NamedTensor>, section: &str, net: &mut Generator<R>) {
    collect_slots(out, section, &mut net.slots());
    for (site, stats) in net.norm_sites() {
        let c = stats.mean.len();
        out.push(NamedTensor::new(
            format!("{section}/{site}.mean"),
            vec![c],
            R::wrap(stats.mean.clone()),
        ));
        out.push(NamedTensor::new(
            format!("{section}/{site}.var"),
            vec![c],
            R::wrap(stats.var.clone()),
        ));
        let flags = vec![
            if stats.ready { R::ONE } else { R::ZERO },
            R::from_f64(stats.accum_passes as f64),
        ];
        out.push(NamedTensor::new(
            format!("{section}/{site}.flags"),
            vec![2],
            R::wrap(flags),
        ));
    }
}

fn collect_adam<R: CkptScalar>(
    out: &mut Vec<NamedTensor>,
    section: &str,
    adam: &Adam<R>,
    slots: &[sigl_core::params::Slot<'_, R>],
) -> Result<(), StateError> {
    let (m, v) = adam.moments();
    if m.is_empty() {
        return Ok(()); // no step taken yet: nothing to persist
    }
    let params: Vec<_> = slots.iter().filter(|s| s.kind == SlotKind::Param).collect();
    if params.len() != m.len() {
        return Err(StateError::Mismatch(format!(
            "{section}: {} moment buffers vs {} parameters",
            m.len(),
            params.len()
        )));
    }
    for ((p, mi), vi) in params.iter().zip(m).zip(v) {
        out.push(NamedTensor::new(
            format!("{section}/{}.m", p.name),
            vec![mi.len()],
            R::wrap(mi.clone()),
        ));
        out.push(NamedTensor::new(
            format!("{section}/{}.v", p.name),
            vec![vi.len()],
            R::wrap(vi.clone()),
        ));
    }
    Ok(())
}

fn take_expected<R: CkptScalar>(
    pool: &mut std::collections::BTreeMap<String, NamedTensor>,
    name: &str,
    shape: &[usize],
) -> Result<Vec<R>, StateError> {
    let t = pool
        .remove(name)
        .ok_or_else(|| StateError::Mismatch(format!("missing tensor {name}")))?;
    if t.shape != shape {
        return Err(StateError::Mismatch(format!(
            "{name}: shape {:?} in file vs {:?} in model",
            t.shape, shape
        )));
    }
    R::unwrap(&t.data).ok_or_else(|| {
        StateError::Mismatch(format!(
            "{name}: dtype {:?} in file does not match the model's precision",
            t.data.dtype()
        ))
    })
}

fn restore_slots<R: CkptScalar>(
    pool: &mut std::collections::BTreeMap<String, NamedTensor>,
    section: &str,
    slots: &mut [sigl_core::params::Slot<'_, R>],
) -> Result<(), StateError> {
    for s in slots {
        let data = take_expected::<R>(pool, &format!("{section}/{}", s.name), &s.shape)?;
        s.data.copy_from_slice(&data);
    }
    Ok(())
}

fn restore_net<R: CkptScalar>(
    pool: &mut std::collections::BTreeMap<String, NamedTensor>,
    section: &str,
    net: &mut Generator<R>,
) -> Result<(), StateError> {
    restore_slots(pool, section, &mut net.slots())?;
    for (site, stats) in net.norm_sites() {
        let c = stats.mean.len();
        stats.mean = take_expected::<R>(pool, &format!("{section}/{site}.mean"), &[c])?;
        stats.var = take_expected::<R>(pool, &format!("{section}/{site}.var"), &[c])?;
        let flags = take_expected::<R>(pool, &format!("{section}/{site}.flags"), &[2])?;
        stats.ready = flags[0] != R::ZERO;
        stats.accum_passes = flags[1].to_f64() as u64;
    }
    Ok(())
}

fn restore_adam<R: CkptScalar>(
    pool: &mut std::collections::BTreeMap<String, NamedTensor>,
    section: &str,
    cfg: sigl_core::train::AdamConfig,
    t: u64,
    slots: &[sigl_core::params::Slot<'_, R>],
) -> Result<Adam<R>, StateError> {
    let params: Vec<_> = slots.iter().filter(|s| s.kind == SlotKind::Param).collect();
    let have_any = params
        .iter()
        .any(|p| pool.contains_key(&format!("{section}/{}.m", p.name)));
    if !have_any {
        if t != 0 {
            return Err(StateError::Mismatch(format!(
                "{section}: header says {t} steps taken but no moment tensors are present"
            )));
        }
        return Ok(Adam::new(cfg));
    }
    let mut m = Vec::with_capacity(params.len());
    let mut v = Vec::with_capacity(params.len());
    for p in &params {
        let n = p.data.len();
        m.push(take_expected::<R>(pool, &format!("{section}/{}.m", p.name), &[n])?);
        v.push(take_expected::<R>(pool, &format!("{section}/{}.v", p.name), &[n])?);
    }
    Ok(Adam::restore(cfg, t, m, v)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use sigl_core::tensor::Tensor;
    use sigl_core::train::train_step;

    fn mini_cfg() -> (NetworkConfig, TrainConfig) {
        let net = NetworkConfig {
            nz: 8,
            embed_dim: 12,
            ..NetworkConfig::miniature()
        };
        let mut train = TrainConfig::standard(4, 11);
        train.batch = 3;
        train.standing_passes = 2;
        train.standing_batch = 2;
        (net, train)
    }

    fn mini_batch(net: &NetworkConfig, n: usize) -> (Tensor<f32>, Vec<Tensor<f32>>) {
        let mut r = StreamRng::new(5, Domain::DataGen, 900);
        let img = Tensor::from_vec(
            &[n, 3, net.target_res, net.target_res],
            (0..n * 3 * net.target_res * net.target_res)
                .map(|_| (r.normal() as f32).tanh())
                .collect(),
        )
        .unwrap();
        let caps = (0..n)
            .map(|_| {
                Tensor::from_vec(
                    &[4, net.embed_dim],
                    (0..4 * net.embed_dim).map(|_| r.normal() as f32).collect(),
                )
                .unwrap()
            })
            .collect();
        (img, caps)
    }

    fn tmp(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("sigl-state-{}-{name}", std::process::id()))
    }

    fn weights_of(state: &mut TrainState<f32>) -> Vec<Vec<f32>> {
        let mut out = Vec::new();
        for s in state.g.slots() {
            out.push(s.data.to_vec());
        }
        for s in state.d.slots() {
            out.push(s.data.to_vec());
        }
        for s in state.g_ema.slots() {
            out.push(s.data.to_vec());
        }
        out
    }

    #[test]
    fn fresh_state_starts_with_ema_equal_to_g() {
        let (net, train) = mini_cfg();
        let mut st = TrainState::<f32>::init(net, train, 0).unwrap();
        let g: Vec<Vec<f32>> = st.g.slots().iter().map(|s| s.data.to_vec()).collect();
        let e: Vec<Vec<f32>> = st.g_ema.slots().iter().map(|s| s.data.to_vec()).collect();
        assert_eq!(g, e);
    }

    #[test]
    fn save_load_is_the_identity_on_all_tensors() {
        let (net, train) = mini_cfg();
        let mut st = TrainState::<f32>::init(net, train, 7).unwrap();
        let (img, caps) = mini_batch(&net, train.batch);
        for step in 0..2 {
            train_step(
                &mut st.g,
                &mut st.d,
                &mut st.g_ema,
                &mut st.adam_g,
                &mut st.adam_d,
                &train,
                &img,
                &caps,
                step,
            )
            .unwrap();
            st.step += 1;
        }
        let path = tmp("identity.ckpt");
        st.save(&path).unwrap();
        let mut back = TrainState::<f32>::load(&path).unwrap();
        assert_eq!(back.step, 2);
        assert_eq!(back.adam_g.t, 2);
        assert_eq!(weights_of(&mut st), weights_of(&mut back));
        let (m0, v0) = st.adam_g.moments();
        let (m1, v1) = back.adam_g.moments();
        assert_eq!((m0, v0), (m1, v1));
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn resumed_training_matches_the_uninterrupted_run_bit_for_bit() {
        let (net, train) = mini_cfg();
        let (img, caps) = mini_batch(&net, train.batch);

        // uninterrupted: 4 steps
        let mut full = TrainState::<f32>::init(net, train, 0).unwrap();
        for step in 0..4 {
            train_step(
                &mut full.g,
                &mut full.d,
                &mut full.g_ema,
                &mut full.adam_g,
                &mut full.adam_d,
                &train,
                &img,
                &caps,
                step,
            )
            .unwrap();
            full.step += 1;
        }

        // interrupted after 2, saved, reloaded, continued
        let mut first = TrainState::<f32>::init(net, train, 0).unwrap();
        for step in 0..2 {
            train_step(
                &mut first.g,
                &mut first.d,
                &mut first.g_ema,
                &mut first.adam_g,
                &mut first.adam_d,
                &train,
                &img,
                &caps,
                step,
            )
            .unwrap();
            first.step += 1;
        }
        let path = tmp("resume.ckpt");
        first.save(&path).unwrap();
        let mut second = TrainState::<f32>::load(&path).unwrap();
        for step in 2..4 {
            train_step(
                &mut second.g,
                &mut second.d,
                &mut second.g_ema,
                &mut second.adam_g,
                &mut second.adam_d,
                &train,
                &img,
                &caps,
                step,
            )
            .unwrap();
            second.step += 1;
        }
        assert_eq!(weights_of(&mut full), weights_of(&mut second));
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn unknown_and_missing_tensors_fail_the_load() {
        let (net, train) = mini_cfg();
        let mut st = TrainState::<f32>::init(net, train, 0).unwrap();
        let path = tmp("strict.ckpt");
        st.save(&path).unwrap();

        // append a stray tensor record by rewriting the file
        let loaded = read_checkpoint(&path).unwrap();
        let mut tensors: Vec<NamedTensor> = Vec::new();
        for rec in &loaded.header.tensors {
            tensors.push(loaded.tensors[&rec.name].clone());
        }
        let mut extra = tensors.clone();
        extra.push(NamedTensor::new(
            "g/stowaway.w",
            vec![1],
            TensorData::F32(vec![0.0]),
        ));
        write_checkpoint(&path, loaded.header.clone(), &extra).unwrap();
        match TrainState::<f32>::load(&path) {
            Err(StateError::Mismatch(msg)) => assert!(msg.contains("stowaway")),
            other => panic!("expected unknown-tensor failure, got {:?}", other.map(|_| ())),
        }

        // drop one expected tensor
        let reduced: Vec<NamedTensor> =
            tensors.iter().filter(|t| t.name != "d/d.psi_b").cloned().collect();
        assert!(reduced.len() == tensors.len() - 1);
        write_checkpoint(&path, loaded.header.clone(), &reduced).unwrap();
        match TrainState::<f32>::load(&path) {
            Err(StateError::Mismatch(msg)) => assert!(msg.contains("d.psi_b")),
            other => panic!("expected missing-tensor failure, got {:?}", other.map(|_| ())),
        }
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn classifier_roundtrips_and_is_not_confused_with_training_state() {
        let cfg = sigl_core::metrics::ClassifierConfig {
            classes: 6,
            features: 8,
            ..Default::default()
        };
        let mut clf = sigl_core::metrics::Classifier::<f64>::init(cfg, 3);
        let path = tmp("clf.ckpt");
        save_classifier(&path, &mut clf, 3).unwrap();
        let mut back = load_classifier::<f64>(&path).unwrap();
        let orig: Vec<Vec<f64>> = clf.slots().iter().map(|s| s.data.to_vec()).collect();
        let rest: Vec<Vec<f64>> = back.slots().iter().map(|s| s.data.to_vec()).collect();
        assert_eq!(orig, rest);
        assert!(matches!(
            TrainState::<f64>::load(&path),
            Err(StateError::Mismatch(_))
        ));
        let _ = std::fs::remove_file(&path);
    }

    #[test]
    fn wrong_precision_is_rejected() {
        let (net, train) = mini_cfg();
        let mut st = TrainState::<f32>::init(net, train, 0).unwrap();
        let path = tmp("precision.ckpt");
        st.save(&path).unwrap();
        match TrainState::<f64>::load(&path) {
            Err(StateError::Mismatch(msg)) => assert!(msg.contains("dtype")),
            other => panic!("expected dtype failure, got {:?}", other.map(|_| ())),
        }
        let _ = std::fs::remove_file(&path);
    }
}
