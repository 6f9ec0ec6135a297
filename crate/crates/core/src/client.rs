//! One federated participant: owns a single view's raw data, an autoencoder,
//! and local centroids; consumes the server broadcast and produces an upload
//! of embedded features and soft assignments.
//!
//! Raw features never leave this module: the only outbound value is
//! [`ClientUpload`]. Each client is an isolated actor; clients run their
//! epoch work concurrently with no shared mutable state.

use serde::{Deserialize, Serialize};

use crate::autoencoder::{
    apply_step, draw_batch, pretrain, AeConfig, Autoencoder, Velocity,
};
use crate::clustering::{kmeans, student_t_assign, Centroids, KmeansOptions, SoftAssignment};
use crate::error::{Error, Result};
use crate::matrix::{pairwise_sqdist, Matrix};
use crate::rng::RngStream;
use crate::server::{Broadcast, GlobalPrototypes};

/// One client's raw feature matrix plus the global identifiers of its rows.
#[derive(Debug, Clone)]
pub struct ViewDataset {
    pub x: Matrix,
    pub sample_ids: Vec<u64>,
    pub view_index: usize,
}

impl ViewDataset {
    pub fn new(x: Matrix, sample_ids: Vec<u64>, view_index: usize) -> Result<Self> {
        if x.rows() != sample_ids.len() {
            return Err(Error::dims(
                "ViewDataset::new",
                format!("{} rows vs {} sample ids", x.rows(), sample_ids.len()),
            ));
        }
        if x.rows() == 0 {
            return Err(Error::dims("ViewDataset::new", "empty dataset"));
        }
        let mut seen = std::collections::HashSet::new();
        for &id in &sample_ids {
            if !seen.insert(id) {
                return Err(Error::Schema {
                    file: format!("view {view_index}"),
                    detail: format!("duplicate sample id {id}"),
                });
            }
        }
        Ok(ViewDataset {
            x,
            sample_ids,
            view_index,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-client hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClientConfig {
    pub clusters: usize,
    pub ae: AeConfig,
    /// Weight of the pseudo-label clustering loss.
    pub gamma: f64,
    /// Local optimization steps per epoch.
    pub local_iters: usize,
    #[serde(skip, default)]
    pub kmeans: KmeansOptions,
}

impl ClientConfig {
    pub fn new(clusters: usize, input_dim: usize) -> Self {
        ClientConfig {
            clusters,
            ae: AeConfig::new(input_dim),
            gamma: 0.1,
            local_iters: 100,
            kmeans: KmeansOptions::default(),
        }
    }
}

/// Autoencoder plus trainable local centroids.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub ae: Autoencoder,
    pub centroids: Centroids,
}

/// The only values that cross the client boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpload {
    pub view_index: usize,
    pub sample_ids: Vec<u64>,
    /// Embedded features, one row per local sample.
    pub z: Matrix,
    /// Soft cluster assignments, row-stochastic.
    pub q: SoftAssignment,
}

/// Global pseudo-labels restricted to one client's samples, in the client's
/// row order.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPseudoLabels(pub Matrix);

/// First-round initialization: reconstruction-only pretraining, then local
/// centroids from k-means on the pretrained embeddings.
pub fn init_round_one(
    data: &ViewDataset,
    cfg: &ClientConfig,
    rng: &mut RngStream,
) -> Result<(LocalModel, Vec<f64>)> {
    let mut ae = Autoencoder::init(&cfg.ae, rng)?;
    let trace = pretrain(&mut ae, &data.x, &cfg.ae, rng)?;
    let z = ae.encode(&data.x)?;
    let km = kmeans(&z, cfg.clusters, &cfg.kmeans, rng)?;
    Ok((
        LocalModel {
            ae,
            centroids: km.centroids,
        },
        trace,
    ))
}

/// Replace local centroids with this view's column slice of the global
/// prototypes.
pub fn set_prototypes(model: &mut LocalModel, protos: &GlobalPrototypes, view: usize) -> Result<()> {
    let slice = protos.view_slice(view)?;
    let expect = model.ae.encoder.output_dim();
    if slice.cols() != expect {
        return Err(Error::dims(
            "set_prototypes",
            format!(
                "prototype slice for view {view} has width {}, embedded dim is {expect}",
                slice.cols()
            ),
        ));
    }
    model.centroids = Centroids(slice);
    Ok(())
}

/// Select and order the rows of the global pseudo-labels for this client's
/// samples.
pub fn map_pseudo_labels(
    p: &Matrix,
    global_ids: &[u64],
    client_ids: &[u64],
) -> Result<LocalPseudoLabels> {
    if p.rows() != global_ids.len() {
        return Err(Error::dims(
            "map_pseudo_labels",
            format!("{} rows vs {} global ids", p.rows(), global_ids.len()),
        ));
    }
    let index: std::collections::HashMap<u64, usize> = global_ids
        .iter()
        .enumerate()
        .map(|(pos, &id)| (id, pos))
        .collect();
    let mut rows = Vec::with_capacity(client_ids.len());
    for &id in client_ids {
        let &pos = index.get(&id).ok_or(Error::MissingSample { id })?;
        rows.push(pos);
    }
    Ok(LocalPseudoLabels(p.select_rows(&rows)))
}

/// KL divergence `sum_ij p log(p/q)` with the `0 log 0 = 0` convention.
pub fn clustering_loss(p: &Matrix, q: &Matrix) -> Result<f64> {
    if p.rows() != q.rows() || p.cols() != q.cols() {
        return Err(Error::dims(
            "clustering_loss",
            format!("{}x{} vs {}x{}", p.rows(), p.cols(), q.rows(), q.cols()),
        ));
    }
    let mut acc = 0.0;
    for (&pv, &qv) in p.as_slice().iter().zip(q.as_slice()) {
        if pv > 0.0 {
            acc += pv * (pv / qv).ln();
        }
    }
    Ok(acc)
}

/// Student's-t internals reused by the loss and its gradient.
struct TKernel {
    /// `t[i][j] = (1 + ||z_i - u_j||^2)^-1`.
    t: Matrix,
    /// Row sums of `t`.
    totals: Vec<f64>,
}

impl TKernel {
    fn new(z: &Matrix, centroids: &Centroids) -> Result<Self> {
        let mut t = pairwise_sqdist(z, &centroids.0)?;
        for v in t.as_mut_slice() {
            *v = 1.0 / (1.0 + *v);
        }
        let totals = (0..t.rows()).map(|i| t.row(i).iter().sum()).collect();
        Ok(TKernel { t, totals })
    }

    fn soft_assignment(&self) -> Matrix {
        let mut q = self.t.clone();
        for i in 0..q.rows() {
            let inv = 1.0 / self.totals[i];
            for v in q.row_mut(i) {
                *v *= inv;
            }
        }
        q
    }

    /// Gradients of `KL(P || Q(Z, U))` w.r.t. `Z` and `U`:
    /// `dL/dz_i = 2 sum_j t_ij (p_ij - s_i q_ij)(z_i - u_j)` with
    /// `s_i = sum_j p_ij`, and the mirrored sign for `du_j`.
    fn kl_gradients(&self, p: &Matrix, z: &Matrix, centroids: &Centroids) -> (Matrix, Matrix) {
        let (n, k) = (z.rows(), centroids.k());
        let d = z.cols();
        let q = self.soft_assignment();
        let mut d_z = Matrix::zeros(n, d);
        let mut d_u = Matrix::zeros(k, d);
        for i in 0..n {
            let s_i: f64 = p.row(i).iter().sum();
            for j in 0..k {
                let coef = 2.0 * self.t[(i, j)] * (p[(i, j)] - s_i * q[(i, j)]);
                if coef == 0.0 {
                    continue;
                }
                let zrow = z.row(i);
                let urow = centroids.0.row(j);
                let dz = d_z.row_mut(i);
                for l in 0..d {
                    dz[l] += coef * (zrow[l] - urow[l]);
                }
                let du = d_u.row_mut(j);
                for l in 0..d {
                    du[l] -= coef * (zrow[l] - urow[l]);
                }
            }
        }
        (d_z, d_u)
    }
}

/// Joint local optimization of the autoencoder and the local centroids on
/// `recon + gamma * KL(P || Q)`. The pseudo-labels are held fixed for all
/// `local_iters` steps; without them the clustering term is dropped.
///
/// Returns the per-step batch-mean total loss trace.
pub fn local_train(
    model: &mut LocalModel,
    data: &ViewDataset,
    pseudo: Option<&LocalPseudoLabels>,
    cfg: &ClientConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    cfg.ae.validate()?;
    if let Some(p) = pseudo {
        if p.0.rows() != data.len() || p.0.cols() != model.centroids.k() {
            return Err(Error::dims(
                "local_train",
                format!(
                    "pseudo-labels are {}x{}, expected {}x{}",
                    p.0.rows(),
                    p.0.cols(),
                    data.len(),
                    model.centroids.k()
                ),
            ));
        }
    }
    let gamma = if pseudo.is_some() { cfg.gamma } else { 0.0 };
    let mut velocity = Velocity::zeros(&model.ae);
    let mut u_velocity = Matrix::zeros(model.centroids.k(), model.centroids.dim());
    let mut trace = Vec::with_capacity(cfg.local_iters);

    for step in 0..cfg.local_iters {
        let batch = draw_batch(data.len(), cfg.ae.batch_size, rng);
        let xb = data.x.select_rows(&batch);
        let enc_cache = model.ae.encoder.forward_cached(&xb)?;
        let zb = enc_cache.output().clone();
        let dec_cache = model.ae.decoder.forward_cached(&zb)?;
        let xhat = dec_cache.output();

        let recon = crate::autoencoder::recon_loss(&xb, xhat)?;
        let mut total = recon;

        // dL/dXhat = 2 (Xhat - X)
        let mut grad_out = xhat.sub(&xb)?;
        grad_out.scale(2.0);
        let (dec_grads, mut d_z) = model.ae.decoder.backward(&dec_cache, &grad_out)?;

        let mut d_u = None;
        if gamma > 0.0 {
            let pseudo = pseudo.expect("gamma > 0 implies pseudo-labels");
            let pb = pseudo.0.select_rows(&batch);
            let kernel = TKernel::new(&zb, &model.centroids)?;
            let qb = kernel.soft_assignment();
            total += gamma * clustering_loss(&pb, &qb)?;
            let (mut kl_dz, mut kl_du) = kernel.kl_gradients(&pb, &zb, &model.centroids);
            kl_dz.scale(gamma);
            kl_du.scale(gamma);
            d_z.add_assign(&kl_dz)?;
            d_u = Some(kl_du);
        }

        if !total.is_finite() {
            return Err(Error::Divergence {
                step,
                detail: format!("total loss is {total}"),
            });
        }
        trace.push(total / batch.len() as f64);

        let (enc_grads, _) = model.ae.encoder.backward(&enc_cache, &d_z)?;
        apply_step(
            &mut model.ae,
            enc_grads,
            dec_grads,
            batch.len(),
            &cfg.ae,
            &mut velocity,
            step,
        )
        .map_err(|e| match e {
            Error::Divergence { detail, .. } => Error::Divergence { step, detail },
            other => other,
        })?;

        if let Some(mut du) = d_u {
            du.scale(1.0 / batch.len() as f64);
            if !du.is_finite() {
                return Err(Error::Divergence {
                    step,
                    detail: "non-finite centroid gradient".to_string(),
                });
            }
            u_velocity.scale(cfg.ae.momentum);
            u_velocity.add_assign(&du)?;
            model.centroids.0.axpy(-cfg.ae.learning_rate, &u_velocity)?;
        }
    }
    Ok(trace)
}

/// Encode the full local dataset and assign it against the local centroids.
/// Raw features are not part of the result.
pub fn make_upload(model: &LocalModel, data: &ViewDataset) -> Result<ClientUpload> {
    let z = model.ae.encode(&data.x)?;
    let q = student_t_assign(&z, &model.centroids)?;
    Ok(ClientUpload {
        view_index: data.view_index,
        sample_ids: data.sample_ids.clone(),
        z,
        q,
    })
}

/// A persistent client actor driven by the federation loop.
#[derive(Debug)]
pub struct Client {
    pub data: ViewDataset,
    pub cfg: ClientConfig,
    model: Option<LocalModel>,
    rng: RngStream,
}

/// Which parts of the broadcast a client consumes (for ablation studies).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalInfoUse {
    pub prototypes: bool,
    pub pseudo_labels: bool,
}

impl GlobalInfoUse {
    pub const ALL: GlobalInfoUse = GlobalInfoUse {
        prototypes: true,
        pseudo_labels: true,
    };
}

impl Client {
    pub fn new(data: ViewDataset, cfg: ClientConfig, rng: RngStream) -> Self {
        Client {
            data,
            cfg,
            model: None,
            rng,
        }
    }

    pub fn model(&self) -> Option<&LocalModel> {
        self.model.as_ref()
    }

    /// Epoch 1: pretrain and initialize centroids locally.
    pub fn first_epoch(&mut self) -> Result<ClientUpload> {
        let (model, _trace) = init_round_one(&self.data, &self.cfg, &mut self.rng)?;
        self.model = Some(model);
        make_upload(self.model.as_ref().unwrap(), &self.data)
    }

    /// Epoch >= 2: refresh centroids from the global prototypes, map the
    /// global pseudo-labels onto local samples, and run local optimization.
    pub fn epoch(&mut self, broadcast: &Broadcast, use_global: GlobalInfoUse) -> Result<ClientUpload> {
        let model = self.model.as_mut().ok_or(Error::InvalidConfig {
            detail: "epoch called before first_epoch".to_string(),
        })?;
        if use_global.prototypes {
            set_prototypes(model, &broadcast.prototypes, self.data.view_index)?;
        }
        let pseudo = if use_global.pseudo_labels {
            Some(map_pseudo_labels(
                &broadcast.pseudo,
                &broadcast.sample_ids,
                &self.data.sample_ids,
            )?)
        } else {
            None
        };
        local_train(model, &self.data, pseudo.as_ref(), &self.cfg, &mut self.rng)?;
        make_upload(model, &self.data)
    }
}
