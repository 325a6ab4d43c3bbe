use cssbo_core::decode::DecoderConfig;
use cssbo_core::embedding::Variant;
use cssbo_core::evaluate::{ObjectiveConfig, Sequential};
use cssbo_core::optimizer::{bo_run, ea_run, rs_run, BoConfig, CodeEvaluator, EaConfig, InputMode, PlantedQuadratic, SearchSpace, Status};

fn small_bo() -> BoConfig {
    let mut cfg = BoConfig { nu0: 4, iterations: 3, ..BoConfig::default() };
    cfg.surrogate.embedding.d_hidden = 6;
    cfg.surrogate.embedding.d_f = 4;
    cfg.surrogate.gp.init_steps = 15;
    cfg.surrogate.gp.refit_steps = 5;
    cfg
}

#[test]
fn bo_on_real_codes_is_reproducible() {
    let space = SearchSpace::new(6, 3).unwrap();
    let obj = ObjectiveConfig { shots: 200, ..ObjectiveConfig::default() };
    let run = || {
        let mut eval = CodeEvaluator::new(space, obj, DecoderConfig::default(), 9, &Sequential).unwrap();
        bo_run(&mut eval, &small_bo(), 9, &mut ()).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.trace.records, b.trace.records);
    assert_eq!(a.trace.len(), 7);
    assert!(a.surrogate.is_some());
    for r in &a.trace.records {
        // Proposals only come from valid codes, so nothing is scored at the floor for invalidity.
        assert_eq!(r.eval.status, Status::Valid);
        assert!(r.eval.k >= 1 && r.eval.n == 36);
        assert!(r.eval.objective.is_finite() && r.eval.target.is_some());
    }
}

#[test]
fn baselines_respect_the_budget() {
    let space = SearchSpace::new(6, 3).unwrap();
    let mut planted = PlantedQuadratic::new(space, 2).unwrap();
    let ea = ea_run(&mut planted, &EaConfig::default(), 45, 2, &mut ()).unwrap();
    let rs = rs_run(&mut planted, 45, 2, &mut ()).unwrap();
    for t in [&ea, &rs] {
        assert_eq!(t.len(), 45);
        assert!(t.best_so_far.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn bo_with_bit_inputs_climbs_the_planted_objective() {
    let space = SearchSpace::new(6, 3).unwrap();
    let mut cfg = BoConfig { inputs: InputMode::Bits, ..BoConfig::default() };
    cfg.surrogate.embedding.variant = Variant::None;
    cfg.surrogate.embedding.d_f = space.dimension();
    let mut planted = PlantedQuadratic::new(space, 4).unwrap();
    let out = bo_run(&mut planted, &cfg, 4, &mut ()).unwrap();
    let initial_best = out.trace.best_so_far[cfg.nu0 - 1];
    assert!(out.trace.best_so_far.last().unwrap() > &initial_best);
}
