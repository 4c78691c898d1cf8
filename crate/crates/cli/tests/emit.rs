use chkc::emit_checkedc;
use chkc_genprop::{generate, term_seed, GenConfig};

#[test]
fn generated_programs_emit() {
    let cfg = GenConfig {
        count: 2_000,
        depth: 8,
        seed: 11,
        ..Default::default()
    };
    for i in 0..cfg.count {
        let g = generate(&cfg, term_seed(cfg.seed, i));
        let c = emit_checkedc(&g.program).unwrap_or_else(|e| panic!("term {i}: {e}"));
        assert_eq!(c.matches('{').count(), c.matches('}').count(), "term {i}:\n{c}");
        assert!(c.contains("static int entry(void)") || c.contains(" entry(void)"), "{c}");
    }
}
