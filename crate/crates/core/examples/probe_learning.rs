//! Scratch probe for the desk-scale learning config (deleted before release).

use spear_core::config::*;
use spear_core::federation::{run_federated, FedConfig};
use spear_core::interaction::InteractionConfig;
use spear_core::loss::SpearHyper;
use spear_core::optim::OptimSettings;

fn main() {
    let mut args = std::env::args().skip(1);
    let order: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(5);
    let pool: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(4);
    let b: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(256);
    let lr: f64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(0.5);
    let seed: u64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(42);
    let count: usize = args.next().map(|s| s.parse().unwrap()).unwrap_or(240);

    let cfg = RunConfig {
        model: ModelConfig { vocab_size: 16, order, max_seq_len: 64 },
        tasks: TasksConfig {
            family: TaskFamily::Copy,
            count,
            payload_len_min: 2,
            payload_len_max: 4,
            distinct_payloads_per_len: Some(pool),
            num_options: 4,
            eval_fraction: 0.2,
        },
        hyper: SpearHyper::default(),
        interaction: InteractionConfig { max_completion_len: 6, hint_ratio: 0.5 },
        optim: OptimSettings {
            base_lr: lr,
            min_lr: lr / 5.0,
            warmup_ratio: 0.1,
            weight_decay: 0.0,
            ..OptimSettings::default()
        },
        fed: FedConfig {
            num_clients: 8,
            clients_per_round: 3,
            rounds: 30,
            local_steps: 5,
            prompts_per_round: b,
            dirichlet_alpha: 1.0,
            seed,
        },
        output: OutputConfig::default(),
    };
    cfg.validate().unwrap();
    let (train, eval) = cfg.build_corpus().unwrap();
    eprintln!("train {} eval {}", train.len(), eval.len());
    let t0 = std::time::Instant::now();
    let (records, _) = run_federated(&cfg, &train, &eval).unwrap();
    let dt = t0.elapsed();

    for r in &records {
        println!(
            "round {:2} acc {:.3} frac_rev {:.3} wins {:?} win_loss {:.3} lose_loss {:.3}",
            r.round, r.accuracy, r.frac_needing_revision, r.win_counts, r.mean_win_loss, r.mean_lose_loss
        );
    }
    let first = records.first().unwrap();
    let last = records.last().unwrap();
    let xs: Vec<f64> = (0..records.len()).map(|i| i as f64).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.frac_needing_revision).collect();
    println!(
        "GAIN {:.3} (first {:.3} last {:.3})  spearman {:.3}  elapsed {:.1?}",
        last.accuracy - first.accuracy,
        first.accuracy,
        last.accuracy,
        spearman(&xs, &ys),
        dt
    );
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..x.len() {
        num += (rx[i] - mx) * (ry[i] - my);
        dx += (rx[i] - mx).powi(2);
        dy += (ry[i] - my).powi(2);
    }
    num / (dx.sqrt() * dy.sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            out[idx[k]] = avg;
        }
        i = j + 1;
    }
    out
}
