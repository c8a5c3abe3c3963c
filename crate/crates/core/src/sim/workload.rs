use crate::model::{ItemId, OperationKind, TxnId};
use crate::sim::config::SimConfig;
use crate::sim::rng::SimRng;

/// One generated transaction: Begin, its data operations, Commit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnSpec {
    pub txn_id: TxnId,
    pub client_id: usize,
    pub ops: Vec<OperationKind>,
}

impl TxnSpec {
    pub fn data_ops(&self) -> impl Iterator<Item = OperationKind> + '_ {
        self.ops.iter().copied().filter(OperationKind::is_data)
    }

    pub fn data_len(&self) -> usize {
        self.data_ops().count()
    }
}

/// `floor(N(mean, sd))`, never below 2.
pub fn sample_len(rng: &mut SimRng, mean: f64, sd: f64) -> usize {
    let v = rng.normal(mean, sd).floor();
    if v < 2.0 {
        2
    } else {
        v as usize
    }
}

/// Read/write pattern of `n` data ops with `reads` reads spread evenly:
/// op `k` is a read when `round((k+1)r/n) > round(kr/n)`, rounding halves up.
/// With half reads this alternates R, W, R, W, ...
pub fn op_kinds(n: usize, reads: usize) -> Vec<bool> {
    let rounded = |k: usize| (2 * k * reads + n) / (2 * n);
    (0..n).map(|k| rounded(k + 1) > rounded(k)).collect()
}

/// Generates `cfg.n_txns` transactions. Transaction `k` is owned by client
/// `k % n_clients`.
pub fn gen_workload(cfg: &SimConfig, rng: &mut SimRng) -> Vec<TxnSpec> {
    (0..cfg.n_txns)
        .map(|k| {
            let n = sample_len(rng, cfg.mean_len, cfg.sd_len);
            let reads = (n as f64 * cfg.read_fraction).round() as usize;
            let mut ops = Vec::with_capacity(n + 2);
            ops.push(OperationKind::Begin);
            for is_read in op_kinds(n, reads) {
                let item = ItemId(rng.below(cfg.n_items as u64) as u32);
                ops.push(if is_read {
                    OperationKind::Read(item)
                } else {
                    OperationKind::Write(item)
                });
            }
            ops.push(OperationKind::Commit);
            TxnSpec {
                txn_id: TxnId(k as u32),
                client_id: k % cfg.n_clients,
                ops,
            }
        })
        .collect()
}
