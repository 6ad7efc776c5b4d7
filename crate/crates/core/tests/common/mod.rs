#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use voi_sched::config::auto_half_widths;
use voi_sched::linalg::Mat;
use voi_sched::mdp::{hold_weight, value_iterate, CostVariant, Grid, Kernel, KernelOptions, StageCosts, ValueSolution, ViOptions};
use voi_sched::model::{solve_steady_state, validate_model, RiccatiOptions, SteadyState, SystemModel};

pub struct Reference {
    pub model: SystemModel,
    pub steady: SteadyState,
    pub weight: Mat,
}

pub fn reference() -> Reference {
    let model = SystemModel::reference();
    let steady = solve_steady_state(&model, RiccatiOptions::default()).unwrap();
    let weight = hold_weight(&model.a, &steady.sigma, CostVariant::OneStepDelay);
    Reference { model, steady, weight }
}

pub struct Solved {
    pub grid: Grid,
    pub kernel: Kernel,
    pub costs: StageCosts,
    pub sol: ValueSolution,
}

impl Reference {
    pub fn solve(&self, theta: f64, grid: Grid) -> Solved {
        let kernel = Kernel::build(&grid, &self.model.a, &self.steady.xi, KernelOptions::default()).unwrap();
        let costs = StageCosts::new(&grid, theta, &self.weight).unwrap();
        let sol = value_iterate(&kernel, &costs, ViOptions::default()).unwrap();
        Solved { grid, kernel, costs, sol }
    }

    /// The reference grid: 61×61 cells on `[−0.2, 0.2]²`.
    pub fn reference_grid(&self) -> Grid {
        Grid::new(&[0.2, 0.2], &[61, 61]).unwrap()
    }

    pub fn auto_grid(&self, theta: f64, counts: usize) -> Grid {
        let half = auto_half_widths(theta, &self.weight, &self.steady.xi);
        Grid::new(&half, &[counts, counts]).unwrap()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random system of state dimension `n` satisfying every model assumption.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize) -> SystemModel {
    loop {
        let m = rng.random_range(1..=n);
        let p = rng.random_range(1..=n);
        let a = gaussian(rng, n, n, 1.0 / (n as f64).sqrt());
        let g = gaussian(rng, n, n, 0.3);
        let h = gaussian(rng, p, p, 0.3);
        let f = gaussian(rng, n, n, 0.5);
        let model = SystemModel {
            a,
            b: gaussian(rng, n, m, 1.0),
            c: gaussian(rng, p, n, 1.0),
            w: &g * g.transpose() + Mat::identity(n, n) * 0.01,
            v: &h * h.transpose() + Mat::identity(p, p) * 0.01,
            q: Mat::identity(n, n) + &f * f.transpose(),
            r: Mat::identity(m, m),
            theta: 0.2,
            x0_mean: vec![0.0; n],
            x0_cov: Mat::zeros(n, n),
        };
        if validate_model(&model).unwrap().is_empty() {
            return model;
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
