use srd_chance::field::sphere::{sphere_samples, SamplerKind};
use srd_chance::problems::{BilinearConfig, BilinearProblem, ControlProblem};
use srd_chance::sqp::{solve_sqp, SqpConfig};

fn main() {
    let fig6 = [(0.82, 3.2090548230041750e-03), (0.84, 1.7815677654847137e-02),
                (0.86, 5.1092425259438405e-02), (0.88, 9.7708132347274754e-02),
                (0.90, 1.7610522241182375e-01)];
    for stride in [2usize, 4, 8] {
        let (mut lo, mut hi) = (1.0f64, 20.0f64);
        for _ in 0..14 {
            let mid = 0.5 * (lo + hi);
            let p = BilinearProblem::new(&BilinearConfig { n: 32, constraint_stride: stride, noise_scale: mid, ..BilinearConfig::default() }).unwrap();
            let smp = sphere_samples(SamplerKind::Mc, 17, 30_000, p.noise_dim()).unwrap();
            let e = 1.0 - p.chance_srd(&p.safe_control(), &smp, false).unwrap().value;
            if e > 0.196 { hi = mid } else { lo = mid }
        }
        let s = 0.5 * (lo + hi);
        let problem = BilinearProblem::new(&BilinearConfig { n: 32, constraint_stride: stride, noise_scale: s, ..BilinearConfig::default() }).unwrap();
        let samples = sphere_samples(SamplerKind::Mc, 42, 60_000, problem.noise_dim()).unwrap();
        print!("stride={stride} scale={s:.3}:");
        let mut u = problem.safe_control();
        for (p, j_ref) in fig6 {
            let config = SqpConfig { target_p: p, max_iter: 100, kkt_tol: 1e-6, ..SqpConfig::default() };
            let report = solve_sqp(&problem, &config, &samples, &u, None).unwrap();
            print!(" {:.2}", report.objective / j_ref);
            u = report.control;
        }
        println!("  (J ratios at p=0.82..0.90)");
    }
}
