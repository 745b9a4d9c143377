// Scan: which (activation, embed_scale, lr) makes the proxy's global top gold-poor?
// Gold is evaluated only on the proxy's top ranks plus a random reference sample.
use rand::seq::IteratorRandom;
use rmlab_core::nn::{Activation, Network, NetworkSpec};
use rmlab_core::pref::*;
use rmlab_core::rm::*;
use rmlab_core::seed;
use rmlab_core::world::*;

fn main() {
    let acts = [Activation::Tanh, Activation::Relu];
    let scales = [1.0, 3.0, 6.0];
    let lrs = [0.01, 0.1];
    let all: Vec<Response> = enumerate_responses(&WorldSpec::default()).unwrap().collect();
    for &act in &acts {
        for &es in &scales {
            for &lr in &lrs {
                let (mut t1, mut t4, mut t64, mut t1024, mut tref) = (0.0, 0.0, 0.0, 0.0, 0.0);
                let mut acc_s = 0.0;
                let n_seeds = 2u64;
                for exp_seed in 0..n_seeds {
                    let spec = WorldSpec { master_seed: seed::derive(exp_seed, "world", 0), embed_scale: es, ..WorldSpec::default() };
                    let mut world = build_world(spec).unwrap();
                    let gen = GenConfig::default();
                    {
                        let World { ref mut gold, ref policy_init, ref prompts, ref embedding, ref spec, .. } = world;
                        normalize_gold(gold, policy_init, prompts, embedding, spec, &gen, 10_000,
                            &mut seed::rng(exp_seed, "goldnorm", 0));
                    }
                    let mut rng = seed::rng(exp_seed, "pairs", 0);
                    let (cands, _) = generate_pairs(&world.policy_init, &world.spec, &world.prompts, 64, &gen, &mut rng);
                    let pairs = label_with_gold(&world.gold, &world, cands).unwrap();
                    let ds = PreferenceDataset { pairs, noise_rate: 0.0, seed: exp_seed, world_hash: "x".into() };
                    let ds = inject_noise(ds, 0.25, &mut seed::rng(exp_seed, "noise", 0)).unwrap();
                    let (train, val) = split_dataset(&ds, 0.1, &mut seed::rng(exp_seed, "split", 0)).unwrap();
                    let trunk_spec = NetworkSpec::with_hidden(world.spec.reward_input_width(), &[16], 1, act).unwrap();
                    let trunk = Network::init(trunk_spec, seed::derive(exp_seed, "trunk", 0));
                    let (member, _) = train_rm(&world.embedding, &world.prompts, &trunk, 100, &train, &val,
                        &RmHyper { learning_rate: lr, ..RmHyper::default() }, 1100).unwrap();
                    acc_s += member.meta.final_val_accuracy;
                    for prompt in world.prompts.iter().take(8) {
                        let proxy: Vec<f64> = all.iter().map(|r| member.score(&world.embedding, prompt, r)).collect();
                        let mut order: Vec<usize> = (0..all.len()).collect();
                        order.sort_by(|&a,&b| proxy[a].partial_cmp(&proxy[b]).unwrap());
                        let top: Vec<usize> = order[all.len()-1024..].to_vec();
                        let g = |i: usize| world.gold_score(prompt, &all[i]);
                        let topk_mean = |k: usize| -> f64 { top[top.len()-k..].iter().map(|&i| g(i)).sum::<f64>() / k as f64 };
                        t1 += topk_mean(1); t4 += topk_mean(4); t64 += topk_mean(64); t1024 += topk_mean(1024);
                        let mut srng = seed::rng(exp_seed, "ref", prompt.id as u64);
                        let sample = (0..all.len()).choose_multiple(&mut srng, 512);
                        tref += sample.iter().map(|&i| g(i)).sum::<f64>() / 512.0;
                    }
                }
                let p = (8 * n_seeds as usize) as f64;
                println!("{act:?} es={es} lr={lr}: acc={:.3} E[g|top-k] 1:{:+.2} 4:{:+.2} 64:{:+.2} 1024:{:+.2} ref:{:+.2}",
                    acc_s / n_seeds as f64, t1/p, t4/p, t64/p, t1024/p, tref/p);
            }
        }
    }
}
