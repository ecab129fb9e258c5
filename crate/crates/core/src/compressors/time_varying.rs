use std::sync::Arc;

use super::{
    add_into, apply_step, check_payload, compress_into, ClientState, ProjectionFactory, Sketch,
    SubspaceTag,
};
use crate::error::{check_len, Error, Result};
use crate::projection::SharedProjection;

/// Final accumulators of a finished epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochFinal {
    pub epoch: usize,
    pub sigmas: Vec<Vec<f64>>,
}

/// What a time-varying client downloads in epoch `epoch`.
#[derive(Clone, Debug, PartialEq)]
pub struct TvDownload {
    pub epoch: usize,
    /// `Σ_e^current`, one vector per subspace.
    pub current: Vec<Vec<f64>>,
    /// `Σ_{e−1}^final`; all zeros during the first epoch.
    pub previous: Vec<Vec<f64>>,
    /// Finals of epochs `s..e−1` for a client last synced in epoch `s < e − 1`.
    pub missed: Vec<EpochFinal>,
}

impl TvDownload {
    pub fn floats(&self) -> usize {
        let count = |v: &[Vec<f64>]| v.iter().map(Vec::len).sum::<usize>();
        count(&self.current)
            + count(&self.previous)
            + self.missed.iter().map(|f| count(&f.sigmas)).sum::<usize>()
    }
}

/// Server of the time-varying protocol. A fresh set of `K` subspaces is drawn
/// every epoch (`K = 1` is the plain protocol; `K > 1` combines it with
/// K-subspace compression).
///
/// Parameters are `θ₀ + Σ_{e'<e} Σ_k A_{e'}⁽ᵏ⁾ Σ_{e'}^final⁽ᵏ⁾ + Σ_k A_e⁽ᵏ⁾ Σ_e^current⁽ᵏ⁾`;
/// the finished-epoch part is folded into `base` once, at each epoch change.
#[derive(Debug)]
pub struct TimeVaryingServer {
    factory: Arc<ProjectionFactory>,
    theta0: Arc<Vec<f64>>,
    subspaces: usize,
    epoch: usize,
    current: Vec<Vec<f64>>,
    finals: Vec<Vec<Vec<f64>>>,
    base: Vec<f64>,
    steps: u64,
}

impl TimeVaryingServer {
    pub fn new(factory: Arc<ProjectionFactory>, theta0: Arc<Vec<f64>>, subspaces: usize) -> Result<Self> {
        if subspaces == 0 {
            return Err(Error::invalid("time-varying compression needs K >= 1"));
        }
        check_len(factory.big_dim(), theta0.len())?;
        let base = theta0.to_vec();
        Ok(Self {
            current: vec![vec![0.0; factory.small_dim()]; subspaces],
            factory,
            theta0,
            subspaces,
            epoch: 0,
            finals: Vec::new(),
            base,
            steps: 0,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn subspaces(&self) -> usize {
        self.subspaces
    }

    pub fn current(&self) -> &[Vec<f64>] {
        &self.current
    }

    /// Frozen finals of all completed epochs.
    pub fn finals(&self) -> &[Vec<Vec<f64>>] {
        &self.finals
    }

    pub fn theta0(&self) -> &Arc<Vec<f64>> {
        &self.theta0
    }

    pub fn factory(&self) -> &Arc<ProjectionFactory> {
        &self.factory
    }

    /// Seed of subspace `k` in epoch `epoch`.
    pub fn epoch_seed(&self, epoch: usize, k: usize) -> u64 {
        self.factory.seed((epoch * self.subspaces + k) as u64)
    }

    /// The subspaces of `epoch`.
    pub fn matrices(&self, epoch: usize) -> Result<Vec<SharedProjection>> {
        epoch_matrices(&self.factory, self.subspaces, epoch)
    }

    /// Download for a client last synced in epoch `synced`.
    pub fn download_for(&self, synced: usize) -> Result<TvDownload> {
        if synced > self.epoch {
            return Err(Error::Protocol(format!(
                "client synced in epoch {synced}, server is in epoch {}",
                self.epoch
            )));
        }
        let zeros = || vec![vec![0.0; self.factory.small_dim()]; self.subspaces];
        let previous = match self.epoch {
            0 => zeros(),
            e => self.finals[e - 1].clone(),
        };
        let missed = (synced..self.epoch.saturating_sub(1))
            .map(|e| EpochFinal {
                epoch: e,
                sigmas: self.finals[e].clone(),
            })
            .collect();
        Ok(TvDownload {
            epoch: self.epoch,
            current: self.current.clone(),
            previous,
            missed,
        })
    }

    /// `Σ_e⁽ᵏ⁾ ← Σ_e⁽ᵏ⁾ − (η/W)·Σ_{j_w = k} C_w`.
    pub fn step(&mut self, sketches: &[Sketch], lr: f64) -> Result<()> {
        if sketches.is_empty() {
            return Err(Error::Protocol("server step with no sketches".into()));
        }
        let small_dim = self.factory.small_dim();
        let mut sums: Vec<Option<Vec<f64>>> = vec![None; self.subspaces];
        for s in sketches {
            match s.tag {
                SubspaceTag::Epoch { epoch, subspace } if epoch == self.epoch && subspace < self.subspaces => {
                    check_payload(s, small_dim)?;
                    add_into(sums[subspace].get_or_insert_with(|| vec![0.0; small_dim]), &s.payload);
                }
                other => {
                    return Err(Error::Protocol(format!(
                        "time-varying server in epoch {} got {other:?} sketch",
                        self.epoch
                    )))
                }
            }
        }
        for (sigma, sum) in self.current.iter_mut().zip(&sums) {
            if let Some(sum) = sum {
                apply_step(sigma, sum, lr, sketches.len());
            }
        }
        self.steps += 1;
        Ok(())
    }

    /// Freezes `Σ_e^final = Σ_e^current` and opens epoch `e + 1` with zero
    /// accumulators and fresh subspaces.
    pub fn advance_epoch(&mut self) -> Result<()> {
        for (a, sigma) in self.matrices(self.epoch)?.iter().zip(&self.current) {
            a.forward_add(sigma, &mut self.base)?;
        }
        let fresh = vec![vec![0.0; self.factory.small_dim()]; self.subspaces];
        self.finals.push(std::mem::replace(&mut self.current, fresh));
        self.epoch += 1;
        Ok(())
    }

    pub fn parameters(&self) -> Result<Vec<f64>> {
        let mut theta = self.base.clone();
        for (a, sigma) in self.matrices(self.epoch)?.iter().zip(&self.current) {
            a.forward_add(sigma, &mut theta)?;
        }
        Ok(theta)
    }
}

fn epoch_matrices(factory: &ProjectionFactory, subspaces: usize, epoch: usize) -> Result<Vec<SharedProjection>> {
    (0..subspaces)
        .map(|k| factory.matrix((epoch * subspaces + k) as u64))
        .collect()
}

fn add_projected(
    factory: &ProjectionFactory,
    epoch: usize,
    sigmas: &[Vec<f64>],
    minus: Option<&[Vec<f64>]>,
    theta: &mut [f64],
) -> Result<()> {
    let matrices = epoch_matrices(factory, sigmas.len(), epoch)?;
    for (k, (a, sigma)) in matrices.iter().zip(sigmas).enumerate() {
        match minus {
            Some(last) => {
                let diff: Vec<f64> = sigma.iter().zip(&last[k]).map(|(x, y)| x - y).collect();
                a.forward_add(&diff, theta)?;
            }
            None => a.forward_add(sigma, theta)?,
        }
    }
    Ok(())
}

/// Brings the client's cached parameters up to the server's.
///
/// For a client last synced in epoch `s` with accumulators `Σ^last`:
/// * `s = e`: `θ += A_e(Σ_e^current − Σ^last)`;
/// * `s < e`: `θ += A_s(Σ_s^final − Σ^last) + Σ_{s<e'<e} A_{e'}Σ_{e'}^final + A_e Σ_e^current`.
///
/// Afterwards `Σ^last = Σ_e^current`.
pub fn tv_reconcile(client: &mut ClientState, factory: &ProjectionFactory, download: &TvDownload) -> Result<()> {
    let (s, e) = (client.synced_epoch, download.epoch);
    let subspaces = download.current.len();
    if client.sigma_last.len() != subspaces {
        return Err(Error::Protocol(format!(
            "client tracks {} subspaces, download carries {subspaces}",
            client.sigma_last.len()
        )));
    }
    if s > e {
        return Err(Error::Protocol(format!("client synced in future epoch {s} > {e}")));
    }
    if s == e {
        add_projected(factory, e, &download.current, Some(&client.sigma_last), &mut client.theta)?;
    } else {
        let needed = e - 1 - s;
        let epochs_ok = download.missed.len() == needed
            && download.missed.iter().enumerate().all(|(i, f)| f.epoch == s + i);
        if !epochs_ok {
            return Err(Error::Protocol(format!(
                "client last synced in epoch {s} needs finals for epochs {s}..{e}"
            )));
        }
        let final_of = |epoch: usize| -> &[Vec<f64>] {
            if epoch + 1 == e {
                &download.previous
            } else {
                &download.missed[epoch - s].sigmas
            }
        };
        add_projected(factory, s, final_of(s), Some(&client.sigma_last), &mut client.theta)?;
        for mid in s + 1..e {
            add_projected(factory, mid, final_of(mid), None, &mut client.theta)?;
        }
        add_projected(factory, e, &download.current, None, &mut client.theta)?;
    }
    client.sigma_last = download.current.clone();
    client.synced_epoch = e;
    Ok(())
}

/// `A_e⁽ᵏ⁾ᵀ g`, tagged with the epoch and subspace.
pub fn tv_compress(
    client: usize,
    factory: &ProjectionFactory,
    subspaces: usize,
    epoch: usize,
    k: usize,
    grad: &[f64],
) -> Result<Sketch> {
    let a = factory.matrix((epoch * subspaces + k) as u64)?;
    compress_into(client, a.as_ref(), grad, SubspaceTag::Epoch { epoch, subspace: k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::SubspaceKind;

    fn server(k: usize) -> TimeVaryingServer {
        let factory = Arc::new(ProjectionFactory::new(SubspaceKind::Fastfood, 77, 32, 8));
        let theta0 = Arc::new((0..32).map(|i| (i as f64 * 0.3).cos()).collect::<Vec<_>>());
        TimeVaryingServer::new(factory, theta0, k).unwrap()
    }

    fn grad(seed: usize) -> Vec<f64> {
        (0..32).map(|i| ((seed * 31 + i) as f64 * 0.17).sin()).collect()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn round(s: &mut TimeVaryingServer, clients: &mut [ClientState], lr: f64) {
        let mut sketches = Vec::new();
        for c in clients.iter_mut() {
            let dl = s.download_for(c.synced_epoch).unwrap();
            tv_reconcile(c, s.factory(), &dl).unwrap();
            let g = grad(c.id + 10 * s.steps as usize);
            sketches.push(tv_compress(c.id, s.factory(), 1, s.epoch(), 0, &g).unwrap());
        }
        s.step(&sketches, lr).unwrap();
    }

    #[test]
    fn epoch_seeds_differ_and_advance_archives() {
        let mut s = server(1);
        assert_ne!(s.epoch_seed(0, 0), s.epoch_seed(1, 0));
        s.advance_epoch().unwrap();
        assert_eq!(s.finals(), &[vec![vec![0.0; 8]]]);
        assert_eq!(s.epoch(), 1);
        s.advance_epoch().unwrap();
        assert_eq!(s.parameters().unwrap(), *s.theta0().clone());
    }

    #[test]
    fn no_op_correction() {
        let mut s = server(1);
        let mut c = ClientState::new(0, s.theta0(), 1, 8);
        round(&mut s, std::slice::from_mut(&mut c), 0.1);
        let dl = s.download_for(0).unwrap();
        tv_reconcile(&mut c, s.factory(), &dl).unwrap();
        s.advance_epoch().unwrap();
        let before = c.theta.clone();
        // last == final of the previous epoch and nothing happened yet this epoch
        let dl = s.download_for(0).unwrap();
        assert_eq!(dl.floats(), 16);
        tv_reconcile(&mut c, s.factory(), &dl).unwrap();
        assert!(close(&before, &c.theta, 1e-12));
        assert_eq!(c.synced_epoch, 1);
    }

    #[test]
    fn clients_track_server_across_epochs() {
        let mut s = server(1);
        let mut clients: Vec<ClientState> = (0..3).map(|i| ClientState::new(i, s.theta0(), 1, 8)).collect();
        for _epoch in 0..3 {
            for _ in 0..3 {
                round(&mut s, &mut clients, 0.05);
                let theta = s.parameters().unwrap();
                for c in clients.iter_mut() {
                    let dl = s.download_for(c.synced_epoch).unwrap();
                    tv_reconcile(c, s.factory(), &dl).unwrap();
                    assert!(close(&c.theta, &theta, 1e-12));
                }
            }
            s.advance_epoch().unwrap();
        }
    }

    #[test]
    fn stale_client_telescopes_missed_epochs() {
        let mut s = server(1);
        let mut active = vec![ClientState::new(0, s.theta0(), 1, 8)];
        let mut stale = ClientState::new(1, s.theta0(), 1, 8);
        round(&mut s, std::slice::from_mut(&mut stale), 0.1);
        for _ in 0..4 {
            round(&mut s, &mut active, 0.1);
            round(&mut s, &mut active, 0.1);
            s.advance_epoch().unwrap();
        }
        round(&mut s, &mut active, 0.1);
        let dl = s.download_for(stale.synced_epoch).unwrap();
        assert_eq!(dl.missed.len(), 3);
        assert_eq!(dl.floats(), 8 * 5);
        tv_reconcile(&mut stale, s.factory(), &dl).unwrap();
        assert!(close(&stale.theta, &s.parameters().unwrap(), 1e-12));
    }

    #[test]
    fn incomplete_history_is_rejected() {
        let mut s = server(1);
        let mut c = ClientState::new(0, s.theta0(), 1, 8);
        s.advance_epoch().unwrap();
        s.advance_epoch().unwrap();
        let mut dl = s.download_for(0).unwrap();
        dl.missed.clear();
        assert!(matches!(tv_reconcile(&mut c, s.factory(), &dl), Err(Error::Protocol(_))));
        assert!(s.download_for(5).is_err());
    }

    #[test]
    fn wrong_epoch_sketch_rejected() {
        let mut s = server(1);
        s.advance_epoch().unwrap();
        let old = tv_compress(0, s.factory(), 1, 0, 0, &grad(1)).unwrap();
        assert!(matches!(s.step(&[old], 0.1), Err(Error::Protocol(_))));
    }

    #[test]
    fn multi_subspace_epochs_reconcile() {
        let mut s = server(3);
        let mut c = ClientState::new(0, s.theta0(), 3, 8);
        for e in 0..3 {
            for t in 0..2 {
                let dl = s.download_for(c.synced_epoch).unwrap();
                assert_eq!(dl.floats(), 2 * 3 * 8);
                tv_reconcile(&mut c, s.factory(), &dl).unwrap();
                let sk: Vec<Sketch> = (0..3)
                    .map(|k| tv_compress(0, s.factory(), 3, e, k, &grad(e * 5 + t + k)).unwrap())
                    .collect();
                s.step(&sk, 0.1).unwrap();
            }
            s.advance_epoch().unwrap();
        }
        let dl = s.download_for(c.synced_epoch).unwrap();
        tv_reconcile(&mut c, s.factory(), &dl).unwrap();
        assert!(close(&c.theta, &s.parameters().unwrap(), 1e-12));
    }
}
