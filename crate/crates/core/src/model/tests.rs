use super::*;
use crate::frame::fixtures::constant_speed_frame;
use crate::frame::FrameDims;
use crate::tensor::gradcheck;
use crate::types::Slot;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn micro_cfg() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        modalities: 2,
        interaction_bound: 2.0,
        history: 5,
        horizon: 3,
        waypoints: 3,
    }
}

/// Frame with the ego plus the first `n` surrounding slots (FV, RV, ...), jittered.
fn frame(cfg: &ModelConfig, n: usize, seed: u64) -> Frame {
    let dims = FrameDims {
        history: cfg.history,
        horizon: cfg.horizon,
        waypoints: cfg.waypoints,
    };
    let mut f = constant_speed_frame("f", dims, &Slot::SURROUNDING[..n]);
    f.vehicles.truncate(n + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in &mut f.vehicles {
        for p in t.history.iter_mut() {
            for v in p.iter_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    f
}

fn plan(n: usize) -> Vec<ControlInput> {
    (0..n).map(|k| ControlInput::new(0.5 - 0.2 * k as f64, 0.01 * k as f64)).collect()
}

#[test]
fn shapes_and_bounds() {
    let cfg = ModelConfig {
        interaction_bound: 1.0,
        ..micro_cfg()
    };
    let m = Model::new(cfg.clone(), 1).unwrap();
    let p = m.params.bind(false);
    let f = frame(&cfg, 2, 3);
    let latent = m.encode(&p, &f).unwrap();
    assert_eq!(latent.pairs.len(), 6);
    for t in latent.pairs.values() {
        assert_eq!(t.shape(), &[2 * cfg.history, cfg.embed_dim]);
    }
    let traj = m.trajectory_former(&p, &track_features(&f, 1)).unwrap();
    assert_eq!(traj.shape(), &[cfg.history, cfg.embed_dim]);
    let (c, b) = m.decode_interaction_blocks(&p, &latent).unwrap();
    for (ct, bt) in c.values().zip(b.values()) {
        assert_eq!(ct.shape(), &[3, 16]);
        assert_eq!(bt.shape(), &[3, 8]);
        assert!(ct.data().iter().chain(bt.data()).all(|v| v.abs() <= 1.0));
    }
}

#[test]
fn v2v_is_directional_and_reduces_to_self_attention() {
    let cfg = micro_cfg();
    let m = Model::new(cfg.clone(), 2).unwrap();
    let p = m.params.bind(false);
    let f = frame(&cfg, 1, 4);
    let a = m.trajectory_former(&p, &track_features(&f, 0)).unwrap();
    let b = m.trajectory_former(&p, &track_features(&f, 1)).unwrap();
    let ab = m.v2v_encode(&p, &a, &b).unwrap();
    let ba = m.v2v_encode(&p, &b, &a).unwrap();
    assert_eq!(ab.shape(), &[cfg.history, cfg.embed_dim]);
    assert_ne!(ab.data(), ba.data());
    let aa = m.v2v_encode(&p, &a, &a).unwrap();
    let a_copy = Tensor::constant(a.shape(), a.data().to_vec());
    let aa2 = m.v2v_encode(&p, &a, &a_copy).unwrap();
    assert_eq!(aa.data(), aa2.data());
}

#[test]
fn absent_side_lanes_do_not_influence_v2m() {
    let cfg = micro_cfg();
    let m = Model::new(cfg.clone(), 3).unwrap();
    let p = m.params.bind(false);
    let mut f = frame(&cfg, 1, 5);
    for t in &mut f.vehicles {
        for lane in [&mut t.map.left, &mut t.map.right] {
            lane.iter_mut().for_each(|w| *w = [1.0, 2.0, 0.1, 0.0]);
        }
    }
    let base = m.encode(&p, &f).unwrap();
    for t in &mut f.vehicles {
        for lane in [&mut t.map.left, &mut t.map.right] {
            lane.iter_mut().for_each(|w| *w = [-7.0, 9.0, -0.3, 0.0]);
        }
    }
    let moved = m.encode(&p, &f).unwrap();
    for (x, y) in base.pairs.values().zip(moved.pairs.values()) {
        assert_eq!(x.data(), y.data());
    }
}

#[test]
fn masked_vehicle_contents_are_ignored() {
    let cfg = micro_cfg();
    let m = Model::new(cfg.clone(), 4).unwrap();
    let mut f = frame(&cfg, 2, 6);
    f.vehicles[2].present = false;
    let a = m.predict(&f, &plan(3)).unwrap();
    for p in f.vehicles[2].history.iter_mut() {
        p[0] += 17.0;
        p[2] -= 3.0;
    }
    f.vehicles[2].map.current.iter_mut().for_each(|w| w[1] += 4.0);
    let b = m.predict(&f, &plan(3)).unwrap();
    assert_eq!(a.blocks, b.blocks);
    assert_eq!(a.gmm, b.gmm);
    assert!(a.gmm.mu[1].is_none());
    for blk in &a.blocks {
        assert_eq!(blk.c.len(), 2);
        assert!(blk.c.keys().all(|p| p.target != 2 && p.source != 2));
    }
}

#[test]
fn swapping_slots_permutes_pair_outputs() {
    let cfg = micro_cfg();
    let m = Model::new(cfg.clone(), 5).unwrap();
    let f = frame(&cfg, 2, 7);
    let mut g = f.clone();
    g.vehicles.swap(1, 2);
    let a = m.predict(&f, &plan(3)).unwrap();
    let b = m.predict(&g, &plan(3)).unwrap();
    let swap = |i: usize| match i {
        1 => 2,
        2 => 1,
        x => x,
    };
    for (ka, kb) in a.blocks.iter().zip(&b.blocks) {
        for (pair, blk) in &ka.c {
            let q = Pair::new(swap(pair.target), swap(pair.source));
            let other = &kb.c[&q];
            assert!((blk - other).amax() < 1e-12);
        }
    }
    let (mu_a, mu_b) = (a.gmm.mu[0].as_ref().unwrap(), b.gmm.mu[1].as_ref().unwrap());
    assert!(mu_a.iter().zip(mu_b).all(|(x, y)| (x - y).abs() < 1e-12));
}

#[test]
fn forward_is_deterministic_and_heads_are_valid() {
    let cfg = micro_cfg();
    let f = frame(&cfg, 2, 8);
    let a = Model::new(cfg.clone(), 6).unwrap().predict(&f, &plan(3)).unwrap();
    let b = Model::new(cfg.clone(), 6).unwrap().predict(&f, &plan(3)).unwrap();
    assert_eq!(a.blocks, b.blocks);
    assert_eq!(a.gmm, b.gmm);
    assert!((a.gmm.p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    for s in a.gmm.sigma.iter().flatten() {
        assert!(s.iter().all(|v| *v > 0.0));
    }
}

#[test]
fn no_surrounding_vehicles_gives_no_interaction() {
    let cfg = micro_cfg();
    let m = Model::new(cfg.clone(), 7).unwrap();
    let mut f = frame(&cfg, 2, 9);
    f.vehicles[1].present = false;
    f.vehicles[2].present = false;
    let pr = m.predict(&f, &plan(3)).unwrap();
    assert!(pr.blocks.iter().all(|b| b.c.is_empty() && b.b.is_empty()));
    assert!(pr.u_surr.iter().flatten().all(Option::is_none));
}

#[test]
fn one_hot_weights_select_that_mean() {
    let g = GmmOutput {
        modalities: 2,
        horizon: 2,
        mu: vec![Some(vec![1.0, 0.1, 5.0, 0.5, 2.0, 0.2, 6.0, 0.6]), None],
        sigma: vec![Some(vec![1.0; 8]), None],
        p: vec![0.0, 1.0],
    };
    assert_eq!(g.most_likely(), 1);
    let seq = g.mean_sequence(1);
    assert_eq!(seq[0][0], Some(ControlInput::new(5.0, 0.5)));
    assert_eq!(seq[1][0], Some(ControlInput::new(6.0, 0.6)));
    assert_eq!(seq[1][1], None);
}

#[test]
fn reactions_depend_on_ego_plan() {
    let cfg = micro_cfg();
    let m = Model::new(cfg.clone(), 8).unwrap();
    let f = frame(&cfg, 2, 10);
    let a = m.predict(&f, &plan(3)).unwrap();
    let b = m.predict(&f, &vec![ControlInput::new(-3.0, -0.04); 3]).unwrap();
    assert_ne!(a.gmm.mu, b.gmm.mu);
}

#[test]
fn zero_heads_give_zero_blocks_and_reactions() {
    let cfg = micro_cfg();
    let mut m = Model::new(cfg.clone(), 9).unwrap();
    m.zero_heads();
    let pr = m.predict(&frame(&cfg, 2, 11), &plan(3)).unwrap();
    for blk in &pr.blocks {
        assert!(blk.c.values().chain(blk.b.values()).all(|x| x.iter().all(|v| *v == 0.0)));
    }
    assert!(pr.u_surr.iter().flatten().flatten().all(|u| *u == ControlInput::ZERO));
}

#[test]
fn full_size_outputs_assemble() {
    let cfg = ModelConfig {
        embed_dim: 8,
        heads: 2,
        encoder_layers: 1,
        decoder_layers: 1,
        modalities: 6,
        interaction_bound: 2.0,
        history: 40,
        horizon: 50,
        waypoints: 20,
    };
    let m = Model::new(cfg.clone(), 10).unwrap();
    let f = frame(&cfg, 6, 12);
    let pr = m.predict(&f, &vec![ControlInput::ZERO; 50]).unwrap();
    assert_eq!(pr.blocks.len(), 50);
    let x = f.current_state();
    for blk in &pr.blocks {
        crate::dynamics::assemble_step(&x, &f.params(), blk).unwrap();
    }
}

#[test]
fn checkpoint_round_trip() {
    let cfg = micro_cfg();
    let m = Model::new(cfg.clone(), 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    m.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back.params, m.params);
    assert_eq!(back.config(), m.config());
}

#[test]
fn end_to_end_gradcheck_micro_config() {
    let cfg = micro_cfg();
    let m = Model::new(cfg.clone(), 12).unwrap();
    let f = frame(&cfg, 2, 13);
    let ego = plan(3);
    let inputs: Vec<(Vec<usize>, Vec<f64>)> = m
        .params
        .ids()
        .map(|id| (m.params.shape(id).to_vec(), m.params.values(id).to_vec()))
        .collect();
    let loss = |ts: &[Tensor]| -> Result<Tensor> {
        let p = Bound::from_tensors(ts.to_vec());
        let out = m.forward(&p, &f, &ego)?;
        let mut terms = Vec::new();
        for (i, t) in out.c.values().chain(out.b.values()).enumerate() {
            terms.push(t.scale(1.0 + 0.1 * i as f64).sum());
        }
        for t in out.gmm.mu.iter().chain(&out.gmm.log_sigma).flatten() {
            terms.push(t.square().sum());
        }
        terms.push(out.gmm.log_p.scale(0.7).exp().sum());
        let mut total = terms[0].clone();
        for t in &terms[1..] {
            total = total.add(t)?;
        }
        Ok(total)
    };
    let err = gradcheck(loss, &inputs, 1e-5).unwrap();
    assert!(err < 1e-3, "encoder-decoder relative error {err}");
}
