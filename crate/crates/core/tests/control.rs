use std::fs;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softmorph::control::{
    decode_with, mutate, random_genome, ActuatorGene, Genome, MutationParams, ParamMask, ScheduleMode, ACTUATOR_COUNT,
    GENE_MAX, MAX_THETA_DEG,
};
use softmorph::robot::MAX_PRESSURE_KPA;

fn gene() -> impl Strategy<Value = ActuatorGene> {
    (0..=GENE_MAX, 0..=GENE_MAX).prop_map(|(f, phi)| ActuatorGene { f, phi })
}

fn genome() -> impl Strategy<Value = Genome> {
    (
        0.0..=MAX_PRESSURE_KPA,
        0.0..=MAX_THETA_DEG,
        prop::array::uniform10(gene()),
    )
        .prop_map(|(p, theta, genes)| Genome::new(p, theta, genes).unwrap())
}

fn mask() -> impl Strategy<Value = ParamMask> {
    (any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(orientation, shape, control)| ParamMask {
        orientation,
        shape,
        control,
    })
}

/// Column `c` is on when it is reached from `phi` by whole strides of `f + 1`.
fn fires(gene: ActuatorGene, c: usize) -> bool {
    let phi = gene.phi as usize;
    c >= phi && (c - phi) % (gene.f as usize + 1) == 0
}

proptest! {
    #[test]
    fn decode_matches_stride_rule(g in genome(), columns in 1usize..=64) {
        let m = decode_with(&g, columns, ScheduleMode::Full);
        prop_assert_eq!(m.columns(), columns);
        for (r, gene) in g.actuators().iter().enumerate() {
            for c in 0..columns {
                prop_assert_eq!(m.get(r, c), fires(*gene, c), "row {} column {}", r, c);
            }
        }
    }

    #[test]
    fn repeated_mode_plays_the_first_half_twice(g in genome(), half in 1usize..=32) {
        let m = decode_with(&g, 2 * half, ScheduleMode::Repeated);
        for (r, gene) in g.actuators().iter().enumerate() {
            for c in 0..2 * half {
                prop_assert_eq!(m.get(r, c), fires(*gene, c % half));
            }
        }
    }

    #[test]
    fn mutation_stays_in_bounds_and_keeps_fixed_fields(
        g in genome(),
        m in mask(),
        sigma_p in 0.0f64..50.0,
        sigma_theta in 0.0f64..400.0,
        sigma_gene in 0.0f64..40.0,
        seed in any::<u64>(),
    ) {
        let params = MutationParams { sigma_p, sigma_theta, sigma_gene };
        let out = mutate(&g, &params, &mut ChaCha8Rng::seed_from_u64(seed), m);
        prop_assert!(Genome::new(out.p_kpa(), out.theta_deg(), *out.actuators()).is_ok());
        if !m.shape {
            prop_assert_eq!(out.p_kpa().to_bits(), g.p_kpa().to_bits());
        }
        if !m.orientation {
            prop_assert_eq!(out.theta_deg().to_bits(), g.theta_deg().to_bits());
        }
        if !m.control {
            prop_assert_eq!(out.actuators(), g.actuators());
        }
    }

    #[test]
    fn genome_text_round_trips(g in genome()) {
        let back = Genome::from_toml(&g.to_toml()).unwrap();
        prop_assert_eq!(back, g);
    }
}

#[test]
fn genome_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("genome.toml");
    let g = random_genome(&mut ChaCha8Rng::seed_from_u64(99));
    fs::write(&path, g.to_toml()).unwrap();
    let back = Genome::from_toml(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, g);
    assert_eq!(back.actuators().len(), ACTUATOR_COUNT);
}

#[test]
fn genome_file_rejects_out_of_range_values() {
    let mut text = String::from("p_kpa = 6.0\ntheta_deg = 45.0\n");
    for i in 0..ACTUATOR_COUNT {
        let f = if i == 4 { 17 } else { 3 };
        text.push_str(&format!("[[actuators]]\nf = {f}\nphi = 2\n"));
    }
    assert!(Genome::from_toml(&text).is_err());
    let short = "p_kpa = 6.0\ntheta_deg = 45.0\n[[actuators]]\nf = 1\nphi = 1\n";
    assert!(Genome::from_toml(short).is_err());
    let extra = text.replace("f = 17", "f = 1").replace("theta_deg = 45.0", "theta_deg = 45.0\nspeed = 3");
    assert!(Genome::from_toml(&extra).is_err());
}
