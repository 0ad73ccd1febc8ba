use std::collections::VecDeque;

use pathosr_tensor::{Adam, Float, Graph, Window};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, CheckpointMeta, NetworkState};
use super::{lr_at_iteration, TrainConfig};
use crate::data::{propose_roi_windows, BatchSampler, Dataset, SamplePair, SamplerState};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::losses::{critic_loss, gather_patches, generator_adv_loss, recon_loss, BoundCritic, FeatureExtractor, RoiBatch};
use crate::model::{Critic, CriticSpec, Generator, GeneratorSpec};

/// Loss values of one training step; `iter` counts completed steps, so the
/// first step logs 1.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub iter: u64,
    pub lr: f64,
    pub j_recon: f64,
    pub j_t1: f64,
    pub j_t2: f64,
    pub j_adv: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Recon,
    CriticWhole,
    CriticRoi,
    Adversarial,
}

impl Stage {
    /// The only network a stage may modify.
    pub fn updates(self) -> Network {
        match self {
            Stage::Recon | Stage::Adversarial => Network::Generator,
            Stage::CriticWhole => Network::T1,
            Stage::CriticRoi => Network::T2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Network {
    Generator,
    T1,
    T2,
}

/// Parameter-hash comparison around every stage that ran.
#[derive(Clone, Debug, PartialEq)]
pub struct AuditRecord {
    pub iteration: u64,
    pub changes: Vec<(Stage, Network, bool)>,
}

impl AuditRecord {
    /// Networks that changed during a stage that does not own them.
    pub fn violations(&self) -> Vec<(Stage, Network)> {
        self.changes
            .iter()
            .filter(|&&(stage, net, changed)| changed && stage.updates() != net)
            .map(|&(stage, net, _)| (stage, net))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub losses: StepLosses,
    pub stages: Vec<Stage>,
    pub roi_patches: usize,
    pub audit: Option<AuditRecord>,
}

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct TrainState<F> {
    pub iteration: u64,
    pub generator: Generator<F>,
    pub g_opt: Adam<F>,
    pub t1: Critic<F>,
    pub t1_opt: Adam<F>,
    pub t2: Critic<F>,
    pub t2_opt: Adam<F>,
    pub sampler: SamplerState,
    pub crop_rng: ChaCha8Rng,
    pub history: VecDeque<StepLosses>,
}

impl<F: Float> TrainState<F> {
    fn fingerprints(&self) -> [String; 3] {
        [
            self.generator.params().fingerprint(),
            self.t1.params().fingerprint(),
            self.t2.params().fingerprint(),
        ]
    }
}

pub struct Trainer<F: Float> {
    cfg: TrainConfig,
    meta: CheckpointMeta,
    phi: Option<FeatureExtractor<F>>,
    state: TrainState<F>,
}

fn finite(value: f64, loss: &'static str, iteration: u64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { loss, iteration })
    }
}

impl<F: Float> Trainer<F> {
    pub fn new(
        cfg: TrainConfig,
        generator: GeneratorSpec,
        critic_t1: CriticSpec,
        critic_t2: CriticSpec,
        phi: Option<FeatureExtractor<F>>,
    ) -> Result<Self> {
        let meta = CheckpointMeta {
            variant: cfg.variant,
            generator,
            critic_t1,
            critic_t2,
            train: cfg,
        };
        meta.validate()?;
        let seed = meta.train.seeds.init;
        let g = Generator::new(&meta.generator, seed)?;
        let t1 = Critic::new(&meta.critic_t1, seed.wrapping_add(1))?;
        let t2 = Critic::new(&meta.critic_t2, seed.wrapping_add(2))?;
        let adam = meta.train.adam();
        let state = TrainState {
            iteration: 0,
            g_opt: Adam::new(adam, g.params()),
            t1_opt: Adam::new(adam, t1.params()),
            t2_opt: Adam::new(adam, t2.params()),
            generator: g,
            t1,
            t2,
            sampler: BatchSampler::new(1, meta.train.seeds.sampler)?.state(),
            crop_rng: ChaCha8Rng::seed_from_u64(meta.train.seeds.crop),
            history: VecDeque::new(),
        };
        Ok(Self {
            cfg: meta.train.clone(),
            meta,
            phi,
            state,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint<F>, phi: Option<FeatureExtractor<F>>) -> Result<Self> {
        let meta = ckpt.meta;
        meta.validate()?;
        let mut generator = Generator::new(&meta.generator, 0)?;
        generator.load_params(ckpt.generator.params)?;
        let mut t1 = Critic::new(&meta.critic_t1, 0)?;
        t1.load_params(ckpt.t1.params)?;
        let mut t2 = Critic::new(&meta.critic_t2, 0)?;
        t2.load_params(ckpt.t2.params)?;
        let state = TrainState {
            iteration: ckpt.iteration,
            generator,
            g_opt: ckpt.generator.adam,
            t1,
            t1_opt: ckpt.t1.adam,
            t2,
            t2_opt: ckpt.t2.adam,
            sampler: ckpt.sampler,
            crop_rng: ckpt.crop_rng,
            history: ckpt.history.into(),
        };
        Ok(Self {
            cfg: meta.train.clone(),
            meta,
            phi,
            state,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<F> {
        let st = &self.state;
        Checkpoint {
            iteration: st.iteration,
            meta: self.meta.clone(),
            generator: NetworkState {
                params: st.generator.params().clone(),
                adam: st.g_opt.clone(),
            },
            t1: NetworkState {
                params: st.t1.params().clone(),
                adam: st.t1_opt.clone(),
            },
            t2: NetworkState {
                params: st.t2.params().clone(),
                adam: st.t2_opt.clone(),
            },
            sampler: st.sampler,
            crop_rng: st.crop_rng.clone(),
            history: st.history.iter().copied().collect(),
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn meta(&self) -> &CheckpointMeta {
        &self.meta
    }

    pub fn state(&self) -> &TrainState<F> {
        &self.state
    }

    pub fn iteration(&self) -> u64 {
        self.state.iteration
    }

    pub fn generator(&self) -> &Generator<F> {
        &self.state.generator
    }

    /// Draws the next minibatch and applies the configured random crop.
    pub fn next_batch(&mut self, dataset: &Dataset) -> Result<Vec<SamplePair>> {
        let mut sampler = BatchSampler::from_state(dataset.len(), self.state.sampler)?;
        let batch = sampler.next_batch(dataset, self.cfg.batch_size)?;
        self.state.sampler = sampler.state();
        let Some(size) = self.cfg.crop_size else {
            return Ok(batch);
        };
        let s = self.cfg.linear_scale;
        batch
            .iter()
            .map(|pair| {
                let (h, w) = (pair.hr.height(), pair.hr.width());
                if h < size || w < size {
                    return Err(Error::Shape(format!(
                        "record {}: {h}x{w} image smaller than crop {size}",
                        pair.id
                    )));
                }
                // crop origins stay on the LR grid so the LR crop is exact
                let row = self.state.crop_rng.random_range(0..=(h - size) / s.get()) * s.get();
                let col = self.state.crop_rng.random_range(0..=(w - size) / s.get()) * s.get();
                pair.crop(row, col, size, s)
            })
            .collect()
    }

    /// One minibatch of the four-stage schedule.
    pub fn train_step(&mut self, batch: &[SamplePair]) -> Result<StepReport> {
        if batch.is_empty() {
            return Err(Error::Config("empty minibatch".into()));
        }
        let cfg = &self.cfg;
        let st = &mut self.state;
        let it = st.iteration;
        let lr = lr_at_iteration(cfg, it);
        let lr_imgs: Vec<&Image> = batch.iter().map(|p| &p.lr).collect();
        let hr_imgs: Vec<&Image> = batch.iter().map(|p| &p.hr).collect();
        let lr_t = Image::batch_to_tensor::<F>(&lr_imgs)?;
        let hr_t = Image::batch_to_tensor::<F>(&hr_imgs)?;
        let audit = cfg.audit_interval > 0 && it.is_multiple_of(cfg.audit_interval);
        let mut changes = Vec::new();
        let mut record = |stage: Stage, before: Option<[String; 3]>, st: &TrainState<F>| {
            if let Some(before) = before {
                let after = st.fingerprints();
                for (i, net) in [Network::Generator, Network::T1, Network::T2].into_iter().enumerate() {
                    changes.push((stage, net, before[i] != after[i]));
                }
            }
        };
        let mut losses = StepLosses {
            iter: it + 1,
            lr,
            ..Default::default()
        };
        let mut stages = vec![Stage::Recon];

        let before = audit.then(|| st.fingerprints());
        {
            let mut g = Graph::new();
            let p = st.generator.bind(&mut g, true);
            let x = g.constant(lr_t.clone());
            let sr = st.generator.forward(&mut g, &p, x)?;
            let loss = recon_loss(&mut g, sr, &hr_t, &cfg.loss, self.phi.as_ref(), cfg.variant.edge_weighted())?;
            losses.j_recon = finite(g.value(loss).item().as_f64(), "j_recon", it)?;
            let grads = g.backward(loss)?.collect(&p);
            st.g_opt.update(st.generator.params_mut(), &grads, lr);
        }
        record(Stage::Recon, before, st);

        let mut roi_patches = 0;
        if cfg.variant.runs_critics() && it >= cfg.pretrain_iters {
            let sr_detached = st.generator.forward_tensor(&lr_t)?;

            stages.push(Stage::CriticWhole);
            let before = audit.then(|| st.fingerprints());
            {
                let mut g = Graph::new();
                let p = st.t1.bind(&mut g, true);
                let loss = critic_loss(&mut g, &st.t1, &p, &hr_t, &sr_detached)?;
                losses.j_t1 = finite(g.value(loss).item().as_f64(), "j_t1", it)?;
                let grads = g.backward(loss)?.collect(&p);
                st.t1_opt.update(st.t1.params_mut(), &grads, lr);
            }
            record(Stage::CriticWhole, before, st);

            let windows: Vec<Window> = if cfg.variant.uses_roi_critic() {
                batch
                    .iter()
                    .enumerate()
                    .flat_map(|(sample, pair)| {
                        propose_roi_windows(&pair.mask, &cfg.roi).into_iter().map(move |w| Window {
                            sample,
                            row: w.row,
                            col: w.col,
                        })
                    })
                    .collect()
            } else {
                Vec::new()
            };
            roi_patches = windows.len();
            let p = cfg.roi.patch_size;
            if !windows.is_empty() {
                stages.push(Stage::CriticRoi);
                let before = audit.then(|| st.fingerprints());
                {
                    let x_hr = gather_patches(&hr_t, &windows, p)?;
                    let x_sr = gather_patches(&sr_detached, &windows, p)?;
                    let mut g = Graph::new();
                    let params = st.t2.bind(&mut g, true);
                    let loss = critic_loss(&mut g, &st.t2, &params, &x_hr, &x_sr)?;
                    losses.j_t2 = finite(g.value(loss).item().as_f64(), "j_t2", it)?;
                    let grads = g.backward(loss)?.collect(&params);
                    st.t2_opt.update(st.t2.params_mut(), &grads, lr);
                }
                record(Stage::CriticRoi, before, st);
            }

            stages.push(Stage::Adversarial);
            let before = audit.then(|| st.fingerprints());
            {
                let mut g = Graph::new();
                let pg = st.generator.bind(&mut g, true);
                let p1 = st.t1.bind(&mut g, false);
                let p2 = cfg.variant.uses_roi_critic().then(|| st.t2.bind(&mut g, false));
                let x = g.constant(lr_t);
                let sr = st.generator.forward(&mut g, &pg, x)?;
                let loss = generator_adv_loss(
                    &mut g,
                    BoundCritic {
                        critic: &st.t1,
                        params: &p1,
                    },
                    p2.as_deref().map(|params| BoundCritic {
                        critic: &st.t2,
                        params,
                    }),
                    sr,
                    &hr_t,
                    RoiBatch {
                        windows: &windows,
                        patch_size: p,
                    },
                    &cfg.loss,
                )?;
                losses.j_adv = finite(g.value(loss).item().as_f64(), "j_adv", it)?;
                let grads = g.backward(loss)?.collect(&pg);
                st.g_opt.update(st.generator.params_mut(), &grads, lr);
            }
            record(Stage::Adversarial, before, st);
        }

        st.iteration += 1;
        st.history.push_back(losses);
        while st.history.len() > cfg.history_len {
            st.history.pop_front();
        }
        Ok(StepReport {
            losses,
            stages,
            roi_patches,
            audit: audit.then_some(AuditRecord {
                iteration: it,
                changes,
            }),
        })
    }
}
