// What occupies each member's global proxy top? Outlier-token content + gold.
use rmlab_core::nn::{Activation, Network, NetworkSpec};
use rmlab_core::pref::*;
use rmlab_core::rm::*;
use rmlab_core::seed;
use rmlab_core::world::*;

fn main() {
    let tail: f64 = std::env::args().nth(1).map(|a| a.parse().unwrap()).unwrap_or(1.6);
    let lr: f64 = std::env::args().nth(2).map(|a| a.parse().unwrap()).unwrap_or(0.01);
    for exp_seed in 0..3u64 {
        let spec = WorldSpec { master_seed: seed::derive(exp_seed, "world", 0), embed_tail: tail, ..WorldSpec::default() };
        let mut world = build_world(spec).unwrap();
        let gen = GenConfig::default();
        {
            let World { ref mut gold, ref policy_init, ref prompts, ref embedding, ref spec, .. } = world;
            normalize_gold(gold, policy_init, prompts, embedding, spec, &gen, 10_000,
                &mut seed::rng(exp_seed, "goldnorm", 0));
        }
        // token row norms
        let norms: Vec<f64> = (0..16u32).map(|t| {
            world.embedding.row(t).iter().map(|x| x*x).sum::<f64>().sqrt()
        }).collect();
        let mut sorted = norms.clone(); sorted.sort_by(|a,b| a.partial_cmp(b).unwrap());
        let median = sorted[8];
        let outlier: Vec<bool> = norms.iter().map(|&n| n > 2.0 * median).collect();
        println!("seed {exp_seed}: row norms (median {median:.1}): {:?} outliers={}", 
            norms.iter().map(|n| (n*10.0).round()/10.0).collect::<Vec<_>>(), outlier.iter().filter(|&&o| o).count());

        let mut rng = seed::rng(exp_seed, "pairs", 0);
        let (cands, _) = generate_pairs(&world.policy_init, &world.spec, &world.prompts, 64, &gen, &mut rng);
        let pairs = label_with_gold(&world.gold, &world, cands).unwrap();
        let ds = PreferenceDataset { pairs, noise_rate: 0.0, seed: exp_seed, world_hash: "x".into() };
        let ds = inject_noise(ds, 0.25, &mut seed::rng(exp_seed, "noise", 0)).unwrap();
        let (train, val) = split_dataset(&ds, 0.1, &mut seed::rng(exp_seed, "split", 0)).unwrap();
        let trunk_spec = NetworkSpec::with_hidden(world.spec.reward_input_width(), &[16], 1, Activation::Relu).unwrap();
        let trunk = Network::init(trunk_spec, seed::derive(exp_seed, "trunk", 0));
        let all: Vec<Response> = enumerate_responses(&world.spec).unwrap().collect();
        for mi in 0..2u64 {
            let (member, _) = train_rm(&world.embedding, &world.prompts, &trunk, 100+mi, &train, &val,
                &RmHyper { learning_rate: lr, ..RmHyper::default() }, 1100+mi).unwrap();
            // prompt 0 only
            let prompt = &world.prompts[0];
            let proxy: Vec<f64> = all.iter().map(|r| member.score(&world.embedding, prompt, r)).collect();
            let mut order: Vec<usize> = (0..all.len()).collect();
            order.sort_by(|&a,&b| proxy[a].partial_cmp(&proxy[b]).unwrap());
            let stat = |lo: usize, hi: usize| -> (f64, f64, f64) {
                let idx = &order[all.len()-hi..all.len()-lo];
                let g: f64 = idx.iter().map(|&i| world.gold_score(prompt, &all[i])).sum::<f64>() / idx.len() as f64;
                let o: f64 = idx.iter().map(|&i| all[i].tokens().iter().filter(|&&t| outlier[t as usize]).count() as f64).sum::<f64>() / idx.len() as f64;
                let p: f64 = idx.iter().map(|&i| proxy[i]).sum::<f64>() / idx.len() as f64;
                (g, o, p)
            };
            let (g1, o1, p1) = stat(0, 8);
            let (g2, o2, p2) = stat(8, 64);
            let (g3, o3, p3) = stat(64, 512);
            let (g4, o4, p4) = stat(512, 4096);
            println!("  member {mi} acc={:.2}: ranks1-8[g={g1:+.2} out={o1:.1} px={p1:.1}] 9-64[g={g2:+.2} out={o2:.1} px={p2:.1}] 65-512[g={g3:+.2} out={o3:.1} px={p3:.1}] 513-4096[g={g4:+.2} out={o4:.1} px={p4:.1}]",
                member.meta.final_val_accuracy);
        }
    }
}
