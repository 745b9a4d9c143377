// Diagnose: is the proxy's global top actually bad for gold? Does the pool reach it?
use rmlab_core::combine::Combiner;
use rmlab_core::nn::{Activation, Network, NetworkSpec};
use rmlab_core::pref::*;
use rmlab_core::rm::*;
use rmlab_core::seed;
use rmlab_core::world::*;

fn main() {
    let exp_seed = 0u64;
    let es: f64 = std::env::args().nth(1).map(|a| a.parse().unwrap()).unwrap_or(1.0);
    let lr: f64 = std::env::args().nth(2).map(|a| a.parse().unwrap()).unwrap_or(0.01);
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
    let trunk_spec = NetworkSpec::with_hidden(world.spec.reward_input_width(), &[16], 1, Activation::Tanh).unwrap();
    let trunk = Network::init(trunk_spec, seed::derive(exp_seed, "trunk", 0));
    let ens = train_ensemble(5, &world.embedding, &world.prompts, &trunk, &train, &val,
        &RmHyper { learning_rate: lr, ..RmHyper::default() }, seed::derive(exp_seed, "ensemble", 0)).unwrap();

    // Full-space evaluation on prompt 0..3
    for pid in 0..3usize {
        let prompt = &world.prompts[pid];
        let all: Vec<Response> = enumerate_responses(&world.spec).unwrap().collect();
        let gold: Vec<f64> = all.iter().map(|r| world.gold_score(prompt, r)).collect();
        let proxy: Vec<f64> = all.iter().map(|r| ens.members()[0].score(&world.embedding, prompt, r)).collect();
        let n = all.len() as f64;
        let gmean = gold.iter().sum::<f64>() / n;
        let gstd = (gold.iter().map(|g| (g-gmean)*(g-gmean)).sum::<f64>() / n).sqrt();
        // correlation
        let pmean = proxy.iter().sum::<f64>() / n;
        let pstd = (proxy.iter().map(|p| (p-pmean)*(p-pmean)).sum::<f64>() / n).sqrt();
        let cov = proxy.iter().zip(gold.iter()).map(|(p,g)| (p-pmean)*(g-gmean)).sum::<f64>() / n;
        // sort by proxy ascending; E[gold | top-k]
        let mut order: Vec<usize> = (0..all.len()).collect();
        order.sort_by(|&a,&b| proxy[a].partial_cmp(&proxy[b]).unwrap());
        let topk = |k: usize| -> f64 { order[all.len()-k..].iter().map(|&i| gold[i]).sum::<f64>() / k as f64 };
        // gold max
        let gmax = gold.iter().cloned().fold(f64::MIN, f64::max);
        println!("prompt {pid}: gold std={gstd:.3} max={gmax:.2} | corr={:.3} | E[gold|proxy-top-k]: k=1:{:.2} k=4:{:.2} k=16:{:.2} k=64:{:.2} k=256:{:.2} k=1024:{:.2} k=4096:{:.2}",
            cov/(pstd*gstd), topk(1), topk(4), topk(16), topk(64), topk(256), topk(1024), topk(4096));
        // where in the global proxy ranking does the pool top sit?
        let mut rng = seed::rng(exp_seed, "bon-pool", pid as u64);
        let pool: Vec<Response> = (0..2048).map(|_| world.policy_init.sample_with(&world.spec, prompt, &gen, &mut rng).0).collect();
        let pool_proxy_max = pool.iter().map(|r| ens.members()[0].score(&world.embedding, prompt, r)).fold(f64::MIN, f64::max);
        let global_max = proxy[*order.last().unwrap()];
        let rank_of_pool_max = order.iter().position(|&i| proxy[i] >= pool_proxy_max).unwrap();
        println!("  pool(2048) proxy max {pool_proxy_max:.2} vs global max {global_max:.2}; pool max at global rank {} of {}", all.len()-rank_of_pool_max, all.len());
    }
}
