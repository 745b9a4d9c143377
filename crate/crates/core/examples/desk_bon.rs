// Scratch: policy-concentration (logit gain) vs BoN overoptimization.
use rmlab_core::bon::*;
use rmlab_core::combine::Combiner;
use rmlab_core::nn::{Activation, Network, NetworkSpec};
use rmlab_core::pref::*;
use rmlab_core::rm::*;
use rmlab_core::seed;
use rmlab_core::world::*;

fn main() {
    let cells: Vec<(f64, f64)> = std::env::args().skip(1).map(|a| {
        let (e, l) = a.split_once(':').unwrap();
        (e.parse().unwrap(), l.parse().unwrap())
    }).collect();
    for &(gain, lr) in &cells {
        println!("=== embed_tail = {gain}, rare_token_bias = {lr} ===");
        for exp_seed in 0..3u64 {
            let spec = WorldSpec { master_seed: seed::derive(exp_seed, "world", 0), embed_tail: gain, rare_token_bias: lr, ..WorldSpec::default() };
            let mut world = build_world(spec).unwrap();
            let gen = GenConfig::default();
            {
                let World { ref mut gold, ref policy_init, ref prompts, ref embedding, ref spec, .. } = world;
                normalize_gold(gold, policy_init, prompts, embedding, spec, &gen, 10_000,
                    &mut seed::rng(exp_seed, "goldnorm", 0));
            }
            let mut rng = seed::rng(exp_seed, "pairs", 0);
            let (cands, coll) = generate_pairs(&world.policy_init, &world.spec, &world.prompts, 64, &gen, &mut rng);
            let pairs = label_with_gold(&world.gold, &world, cands).unwrap();
            let ds = PreferenceDataset { pairs, noise_rate: 0.0, seed: exp_seed, world_hash: "x".into() };
            let ds = inject_noise(ds, 0.25, &mut seed::rng(exp_seed, "noise", 0)).unwrap();
            let (train, val) = split_dataset(&ds, 0.1, &mut seed::rng(exp_seed, "split", 0)).unwrap();

            let trunk_spec = NetworkSpec::with_hidden(world.spec.reward_input_width(), &[16], 1, Activation::Relu).unwrap();
            let trunk = Network::init(trunk_spec, seed::derive(exp_seed, "trunk", 0));
            let ens = train_ensemble(5, &world.embedding, &world.prompts, &trunk, &train, &val,
                &RmHyper::default(), seed::derive(exp_seed, "ensemble", 0)).unwrap();
            let accs: Vec<f64> = ens.members().iter().map(|m| m.meta.final_val_accuracy).collect();
            let median_acc = { let mut a = accs.clone(); a.sort_by(|x,y| x.partial_cmp(y).unwrap()); a[2] };

            let combiners = vec![
                Combiner::Single { member: 0 }, Combiner::Single { member: 1 }, Combiner::Single { member: 2 },
                Combiner::Single { member: 3 }, Combiner::Single { member: 4 },
                Combiner::Mean, Combiner::Wco, Combiner::Uwo { lambda: 0.5 },
            ];
            let results = run_bon_experiment(&world, &world.policy_init, &ens, &combiners, &GenConfig::UNTRUNCATED, 2048, 1024,
                seed::derive(exp_seed, "bon", 0)).unwrap();
            let navg = results[0].1.rows.len();
            let mut single_gold = vec![0.0; navg];
            for r in &results[..5] {
                for (i, row) in r.1.rows.iter().enumerate() { single_gold[i] += row.gold_mean / 5.0; }
            }
            let summary = |gold: &[f64]| -> (f64, f64, f64, f64) {
                let init = gold[0];
                let peak = gold.iter().cloned().fold(f64::MIN, f64::max);
                let fin = *gold.last().unwrap();
                (init, peak, fin, (peak - fin) / (peak - init).max(1e-12))
            };
            let (i0, p0, f0, d0) = summary(&single_gold);
            print!("seed {exp_seed}: coll={coll} acc={median_acc:.3} single[i={i0:+.2} p={p0:+.2} f={f0:+.2} d={:.0}%]", d0*100.0);
            for r in &results[5..] {
                let gold: Vec<f64> = r.1.rows.iter().map(|x| x.gold_mean).collect();
                let (_, p, f, d) = summary(&gold);
                print!(" {}[p={p:+.2} f={f:+.2} d={:.0}%]", r.0.tag(), d*100.0);
            }
            println!();
        }
    }
}
