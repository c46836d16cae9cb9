//! Velocity-matching training loop over oracle scenes.

use super::{interpolate, sample_time, velocity_target, FlowModel, FlowState};
use crate::exchange::{GraphTopo, NodeFeatures};
use crate::graph::{mask_modalities, SceneGraph};
use crate::tensor::{AdamW, GradAccum, NodeId, Rng, Tape};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// Piecewise-constant rates; the second applies from 35% through the
    /// run, the third from 70%.
    pub lr: [f64; 3],
    /// Probability that a node loses its text or vision slot per loss term.
    pub mask_ratio: f64,
    /// Probability a loss term trains the unconditional field instead.
    pub cond_dropout: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 8,
            lr: [1e-4, 5e-5, 1e-5],
            mask_ratio: 0.2,
            cond_dropout: 0.1,
            weight_decay: 0.0,
            seed: 0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("mask-ratio", self.mask_ratio), ("cond-dropout", self.cond_dropout)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        // Slot RNG streams reserve 1024 slots per step.
        if self.batch == 0 || self.batch > 1024 {
            return Err(Error::Config(format!("batch size {} outside 1..=1024", self.batch)));
        }
        if self.lr.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::Config(format!("learning rates {:?} must be positive", self.lr)));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log-every must be positive".into()));
        }
        Ok(())
    }
}

/// The rate in force at `step` of a `cfg.steps`-long run.
pub fn lr_at(cfg: &TrainConfig, step: usize) -> f64 {
    let frac = step as f64 / cfg.steps.max(1) as f64;
    if frac < 0.35 {
        cfg.lr[0]
    } else if frac < 0.70 {
        cfg.lr[1]
    } else {
        cfg.lr[2]
    }
}

/// One supervised pair: a conditioning graph and its clean state.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub graph: SceneGraph,
    pub d0: FlowState,
}

/// Anything that can predict velocity rows on a tape. The trained model is
/// the real implementation; tests substitute exact stubs.
pub trait VelocityNode {
    fn velocity_node(
        &self,
        tape: &mut Tape,
        topo: &GraphTopo,
        feats: &NodeFeatures,
        state: &FlowState,
        t: f64,
        conditioned: bool,
    ) -> Result<NodeId>;
}

impl VelocityNode for FlowModel {
    fn velocity_node(
        &self,
        tape: &mut Tape,
        topo: &GraphTopo,
        feats: &NodeFeatures,
        state: &FlowState,
        t: f64,
        conditioned: bool,
    ) -> Result<NodeId> {
        FlowModel::velocity_node(self, tape, topo, feats, state, t, conditioned)
    }
}

/// One velocity-matching loss term on the tape.
///
/// RNG draw order is frozen: noise state, time, modality mask, dropout
/// coin. Replays of the same stream rebuild the identical term.
pub fn grf_loss<V: VelocityNode>(
    tape: &mut Tape,
    model: &V,
    item: &TrainItem,
    rng: &mut Rng,
    mask_ratio: f64,
    cond_dropout: f64,
) -> Result<NodeId> {
    if item.d0.node_count() != item.graph.len() {
        return Err(Error::Contract(format!(
            "state covers {} nodes, graph has {}",
            item.d0.node_count(),
            item.graph.len()
        )));
    }
    let d1 = item.d0.noise_like(rng);
    let t = sample_time(rng);
    let masked = mask_modalities(&item.graph, mask_ratio, rng);
    let drop = rng.bernoulli(cond_dropout);
    let d_t = interpolate(&item.d0, &d1, t)?;
    let v_target = velocity_target(&item.d0, &d1)?;
    let topo = GraphTopo::new(&masked);
    let feats = NodeFeatures::from_graph(&masked);
    let pred = model.velocity_node(tape, &topo, &feats, &d_t, t, !drop)?;
    let target = tape.constant(v_target);
    tape.mse(pred, target)
}

/// Owns the model, the optimizer, and the step counter so runs can stop
/// and resume bit-exactly: every step derives its RNG streams from
/// (seed, step) alone.
pub struct Trainer {
    pub model: FlowModel,
    pub cfg: TrainConfig,
    pub opt: AdamW,
    pub step: usize,
    /// Shown in the abort message when a loss goes non-finite.
    pub last_checkpoint: Option<String>,
}

impl Trainer {
    pub fn new(model: FlowModel, cfg: TrainConfig) -> Result<Trainer> {
        cfg.validate()?;
        let opt = AdamW::new(&model.params, cfg.weight_decay);
        Ok(Trainer { model, cfg, opt, step: 0, last_checkpoint: None })
    }

    /// Rebuild mid-run state, e.g. from a checkpoint.
    pub fn resume(model: FlowModel, cfg: TrainConfig, opt: AdamW, step: usize) -> Result<Trainer> {
        cfg.validate()?;
        Ok(Trainer { model, cfg, opt, step, last_checkpoint: None })
    }

    pub fn run(
        &mut self,
        data: &[TrainItem],
        on_loss: &mut dyn FnMut(usize, f64),
    ) -> Result<()> {
        self.run_until(data, self.cfg.steps, on_loss)
    }

    /// Advance to optimizer step `until` (a no-op when already there).
    pub fn run_until(
        &mut self,
        data: &[TrainItem],
        until: usize,
        on_loss: &mut dyn FnMut(usize, f64),
    ) -> Result<()> {
        if self.step >= until {
            return Ok(());
        }
        if data.is_empty() {
            return Err(Error::Contract("training needs a non-empty dataset".into()));
        }
        for item in data {
            if item.d0.branch() != self.model.branch {
                return Err(Error::Contract(format!(
                    "dataset carries {} states, model trains the {} branch",
                    item.d0.branch().name(),
                    self.model.branch.name()
                )));
            }
        }
        let batch = self.cfg.batch;
        let mut accum = GradAccum::new();
        while self.step < until {
            let s = self.step;
            accum.clear();
            let mut sel = Rng::new(self.cfg.seed ^ 0x5E1, s as u64);
            let mut mean_loss = 0.0;
            for slot in 0..batch {
                let idx = sel.below(data.len());
                let mut rng = Rng::new(self.cfg.seed, (s * 1024 + slot + 1) as u64);
                let mut tape = Tape::new();
                let loss_node = grf_loss(
                    &mut tape,
                    &self.model,
                    &data[idx],
                    &mut rng,
                    self.cfg.mask_ratio,
                    self.cfg.cond_dropout,
                )?;
                let loss = tape.value(loss_node).item();
                if !loss.is_finite() {
                    return Err(self.abort(s, loss));
                }
                mean_loss += loss / batch as f64;
                let grads = tape.backward(loss_node)?;
                accum.add(&self.model.params, &grads, 1.0 / batch as f64);
            }
            self.opt.step(&mut self.model.params, &accum, lr_at(&self.cfg, s))?;
            if s % self.cfg.log_every == 0 {
                on_loss(s, mean_loss);
            }
            self.step = s + 1;
        }
        Ok(())
    }

    fn abort(&self, step: usize, loss: f64) -> Error {
        let ck = self.last_checkpoint.as_deref().unwrap_or("none");
        Error::Training {
            step,
            msg: format!("non-finite loss {loss}; last checkpoint: {ck}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Branch;
    use crate::graph::{generate_dataset, OracleConfig, SceneSample};
    use crate::tensor::Tensor;

    fn layout_items(count: usize, seed: u64) -> Vec<TrainItem> {
        let cfg = OracleConfig::default();
        generate_dataset(&cfg, count, seed)
            .unwrap()
            .into_iter()
            .map(|s| layout_item(&s))
            .collect()
    }

    fn layout_item(s: &SceneSample) -> TrainItem {
        let n = s.graph.len();
        let data: Vec<f64> = s.layouts.iter().flatten().copied().collect();
        TrainItem {
            graph: s.graph.clone(),
            d0: FlowState::layout(Tensor { shape: vec![n, 8], data }).unwrap(),
        }
    }

    /// Replays grf_loss's frozen draw order to expose the exact target,
    /// then answers with it plus a fixed offset.
    struct Offset {
        v: Tensor,
        offset: f64,
    }

    impl Offset {
        fn probing(item: &TrainItem, rng: &Rng, offset: f64) -> Offset {
            let mut replay = rng.clone();
            let d1 = item.d0.noise_like(&mut replay);
            let v = velocity_target(&item.d0, &d1).unwrap();
            Offset { v, offset }
        }
    }

    impl VelocityNode for Offset {
        fn velocity_node(
            &self,
            tape: &mut Tape,
            _topo: &GraphTopo,
            _feats: &NodeFeatures,
            _state: &FlowState,
            _t: f64,
            _conditioned: bool,
        ) -> Result<NodeId> {
            let mut v = self.v.clone();
            for x in &mut v.data {
                *x += self.offset;
            }
            Ok(tape.constant(v))
        }
    }

    #[test]
    fn exact_prediction_gives_zero_loss_and_unit_offset_gives_one() {
        let item = &layout_items(1, 50)[0];
        for (offset, want) in [(0.0, 0.0), (1.0, 1.0)] {
            let mut rng = Rng::new(9, 1);
            let stub = Offset::probing(item, &rng, offset);
            let mut tape = Tape::new();
            let l = grf_loss(&mut tape, &stub, item, &mut rng, 0.2, 0.1).unwrap();
            let got = tape.value(l).item();
            assert!((got - want).abs() < 1e-12, "offset {offset}: loss {got}");
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let item = &layout_items(1, 51)[0];
        let mut model = FlowModel::new(Branch::Layout, 6, false, 7).unwrap();
        let base_rng = Rng::new(13, 5);

        let mut rng = base_rng.clone();
        let mut tape = Tape::new();
        let l = grf_loss(&mut tape, &model, item, &mut rng, 0.2, 0.1).unwrap();
        let grads = tape.backward(l).unwrap();

        let eps = 1e-5;
        for name in ["den.layout.l0.w", "den.layout.l3.b", "xch.l1.msg1.w", "xch.in.w"] {
            let id = model.params.lookup(name).unwrap();
            let g = grads.param(id).expect(name);
            let (coord, _) = g
                .data
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap();
            let an = g.data[coord];
            let x = model.params.value(id).data[coord];
            let mut probe = |v: f64| {
                model.params.value_mut(id).data[coord] = v;
                let mut rng = base_rng.clone();
                let mut tape = Tape::new();
                let l = grf_loss(&mut tape, &model, item, &mut rng, 0.2, 0.1).unwrap();
                let out = tape.value(l).item();
                model.params.value_mut(id).data[coord] = x;
                out
            };
            let fd = (probe(x + eps) - probe(x - eps)) / (2.0 * eps);
            let rel = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-12);
            assert!(rel < 1e-4, "{name}[{coord}]: fd {fd} vs grad {an} (rel {rel})");
        }
    }

    #[test]
    fn zero_steps_leave_params_unchanged() {
        let data = layout_items(3, 52);
        let model = FlowModel::new(Branch::Layout, 6, false, 7).unwrap();
        let before = model.params.checksum();
        let mut tr = Trainer::new(model, TrainConfig { steps: 0, ..TrainConfig::default() })
            .unwrap();
        tr.run(&data, &mut |_, _| {}).unwrap();
        assert_eq!(tr.model.params.checksum(), before);
        assert_eq!(tr.step, 0);
    }

    #[test]
    fn same_seed_runs_are_bitwise_identical() {
        let data = layout_items(4, 53);
        let cfg = TrainConfig { steps: 6, batch: 3, seed: 17, ..TrainConfig::default() };
        let run = |cfg: &TrainConfig| {
            let model = FlowModel::new(Branch::Layout, 6, false, 7).unwrap();
            let mut tr = Trainer::new(model, cfg.clone()).unwrap();
            tr.run(&data, &mut |_, _| {}).unwrap();
            tr.model.params.checksum()
        };
        assert_eq!(run(&cfg), run(&cfg));
        let other = TrainConfig { seed: 18, ..cfg.clone() };
        assert_ne!(run(&cfg), run(&other));
    }

    #[test]
    fn stop_and_resume_matches_a_straight_run() {
        let data = layout_items(4, 54);
        let cfg = TrainConfig { steps: 8, batch: 2, seed: 5, ..TrainConfig::default() };
        let straight = {
            let model = FlowModel::new(Branch::Layout, 6, false, 7).unwrap();
            let mut tr = Trainer::new(model, cfg.clone()).unwrap();
            tr.run(&data, &mut |_, _| {}).unwrap();
            tr.model.params.checksum()
        };
        let split = {
            let model = FlowModel::new(Branch::Layout, 6, false, 7).unwrap();
            let mut tr = Trainer::new(model, cfg.clone()).unwrap();
            tr.run_until(&data, 3, &mut |_, _| {}).unwrap();
            tr.run_until(&data, 8, &mut |_, _| {}).unwrap();
            tr.model.params.checksum()
        };
        assert_eq!(straight, split);
    }

    #[test]
    fn losses_are_logged_on_schedule() {
        let data = layout_items(2, 55);
        let cfg = TrainConfig { steps: 5, batch: 1, log_every: 2, ..TrainConfig::default() };
        let model = FlowModel::new(Branch::Layout, 6, false, 7).unwrap();
        let mut tr = Trainer::new(model, cfg).unwrap();
        let mut seen = Vec::new();
        tr.run(&data, &mut |s, l| {
            assert!(l.is_finite());
            seen.push(s);
        })
        .unwrap();
        assert_eq!(seen, vec![0, 2, 4]);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let model = FlowModel::new(Branch::Layout, 6, false, 7).unwrap();
        let mut tr = Trainer::new(model, TrainConfig::default()).unwrap();
        assert!(tr.run(&[], &mut |_, _| {}).is_err());
    }

    #[test]
    fn short_run_reduces_loss() {
        let data = layout_items(6, 56);
        let cfg = TrainConfig { steps: 60, batch: 4, seed: 3, ..TrainConfig::default() };
        let model = FlowModel::new(Branch::Layout, 6, false, 7).unwrap();
        let mut tr = Trainer::new(model, cfg).unwrap();
        let mut losses = Vec::new();
        tr.run(&data, &mut |_, l| losses.push(l)).unwrap();
        assert!(losses.last().unwrap() < losses.first().unwrap());
    }
}
