//! Every example doubles as a smoke test.

macro_rules! examples {
    ($($name:ident => $path:literal),* $(,)?) => {
        $(
            #[allow(dead_code)]
            #[path = $path]
            mod $name;

            #[test]
            fn $name() {
                $name::run_example().unwrap();
            }
        )*
    };
}

examples!(
    singular_system => "../examples/singular_system.rs",
    threshold_vs_cutoff => "../examples/threshold_vs_cutoff.rs",
    oracle_risks => "../examples/oracle_risks.rs",
    theorem1_check => "../examples/theorem1_check.rs",
    noisy_operator => "../examples/noisy_operator.rs",
    tail_certificates => "../examples/tail_certificates.rs",
    experiment => "../examples/experiment.rs",
);
