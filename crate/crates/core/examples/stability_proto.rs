// scratch: tune the desk-scale stability scenario
use pswa_core::analytics::{monotonic_stats, window_stats, AccuracySeries};
use pswa_core::config::RunConfigFile;
use pswa_core::harness::{run_training, NoopObserver, TrainingConfig};

fn config(strategy: &str, seed: u64, lr: f64, sep: f64, out: &str) -> TrainingConfig {
    let sampler = if strategy == "none" {
        String::new()
    } else {
        format!("[sampler]\ntype = \"{strategy}\"\nbeta = 1.0\n")
    };
    let text = format!(
        r#"
[model]
input_shape = [20]
[[model.layers]]
type = "dense"
in = 20
out = 32
[[model.layers]]
type = "batchnorm"
features = 32
[[model.layers]]
type = "relu"
[[model.layers]]
type = "dense"
in = 32
out = 5

[data]
source = "synthetic"
n_train = 2000
n_test = 1000
dims = 20
classes = 5
separation = {sep}
data_seed = 777

[optimizer]
type = "sgd"

[schedule]
type = "constant"
base_lr = {lr}

{sampler}
[run]
epochs = 40
batch_size = 50
seed = {seed}
output_dir = "{out}"
record_timing = false
"#
    );
    TrainingConfig::resolve(RunConfigFile::from_toml(&text).unwrap()).unwrap()
}

fn main() {
    let lr = 0.5;
    let sep = std::env::args().nth(1).map(|s| s.parse().unwrap()).unwrap_or(2.0);
    println!("lr={lr} sep={sep}");
    let mut sd_wins = 0;
    let mut stable_wins = 0;
    for seed in 0..5u64 {
        let mut results = Vec::new();
        for strat in ["none", "pswa"] {
            let out = format!("/tmp/proto/{strat}_{seed}");
            let cfg = config(strat, seed, lr, sep, &out);
            let run = run_training(&cfg, None, &mut NoopObserver).unwrap();
            let accs: Vec<f64> = run.records.iter().map(|r| r.test_acc).collect();
            let series = AccuracySeries::from_fractions(&accs).unwrap();
            let (mean, sd) = window_stats(&series, 20, 30).unwrap();
            let m = monotonic_stats(&series, 0.2).unwrap();
            println!(
                "seed {seed} {strat:>5}: win_mean {mean:6.2} win_sd {sd:6.3} stable {:.3} improve {:.3} final {:5.2}",
                m.stable_frac, m.improve_frac, series.values()[39]
            );
            results.push((sd, m.stable_frac));
        }
        if results[1].0 < results[0].0 { sd_wins += 1; }
        if results[1].1 >= results[0].1 { stable_wins += 1; }
    }
    println!("sd_wins {sd_wins}/5  stable_wins {stable_wins}/5");
}
