//! WebAssembly bindings for the consolidation demo page in `www/`.
//!
//! Build with `wasm-pack build crates/web --target web --out-dir www/pkg`.

pub mod demo;

use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// Analytic `p / p0` at `n` depths, top to base.
#[wasm_bindgen(js_name = analyticProfile)]
pub fn analytic_profile(cv: f64, two_way: bool, t: f64, n: usize) -> Result<Vec<f64>, JsError> {
    let spec = demo::spec(cv, two_way).map_err(js_err)?;
    demo::analytic_profile(&spec, t, n).map_err(js_err)
}

/// Analytic `p / p0` raster, `n_t` rows over `[0, t_max]`, each `n_z` depths.
#[wasm_bindgen(js_name = analyticRaster)]
pub fn analytic_raster(cv: f64, two_way: bool, n_z: usize, n_t: usize) -> Result<Vec<f64>, JsError> {
    let spec = demo::spec(cv, two_way).map_err(js_err)?;
    demo::analytic_raster(&spec, n_z, n_t).map_err(js_err)
}

/// Crank-Nicolson solution kept for repeated profile queries.
#[wasm_bindgen]
pub struct Oracle {
    spec: pinn_consolidation::problem::ProblemSpec,
    solution: pinn_consolidation::fd::FdSolution,
}

#[wasm_bindgen]
impl Oracle {
    #[wasm_bindgen(constructor)]
    pub fn new(cv: f64, two_way: bool, n_z: usize, n_steps: usize) -> Result<Oracle, JsError> {
        let spec = demo::spec(cv, two_way).map_err(js_err)?;
        let solution = demo::solve(&spec, n_z, n_steps).map_err(js_err)?;
        Ok(Oracle { spec, solution })
    }

    /// Finite-difference profile at `n` depths.
    pub fn profile(&self, t: f64, n: usize) -> Result<Vec<f64>, JsError> {
        Ok(demo::compare(&self.spec, &self.solution, t, n).map_err(js_err)?.fd)
    }

    /// Largest `|fd - analytic|` over the `n` depths at time `t`.
    #[wasm_bindgen(js_name = maxDifference)]
    pub fn max_difference(&self, t: f64, n: usize) -> Result<f64, JsError> {
        Ok(demo::compare(&self.spec, &self.solution, t, n)
            .map_err(js_err)?
            .max_abs_diff)
    }

    #[wasm_bindgen(getter, js_name = diffusionNumber)]
    pub fn diffusion_number(&self) -> f64 {
        self.solution.diffusion_number
    }
}

/// A small PINN trained a few epochs per animation frame.
#[wasm_bindgen]
pub struct Training {
    session: demo::Session,
    last_loss: f64,
}

#[wasm_bindgen]
impl Training {
    #[wasm_bindgen(constructor)]
    pub fn new(
        cv: f64,
        two_way: bool,
        inverse: bool,
        hidden_layers: usize,
        units: usize,
        seed: u32,
    ) -> Result<Training, JsError> {
        let spec = demo::spec(cv, two_way).map_err(js_err)?;
        let session = demo::Session::new(spec, inverse, hidden_layers, units, seed.into()).map_err(js_err)?;
        Ok(Training {
            session,
            last_loss: f64::NAN,
        })
    }

    /// Runs `epochs` epochs and returns the latest total MSE.
    pub fn step(&mut self, epochs: usize) -> Result<f64, JsError> {
        if let Some(r) = self.session.step(epochs).map_err(js_err)? {
            self.last_loss = r.mse_total;
        }
        Ok(self.last_loss)
    }

    /// Total MSE of the latest epoch, `NaN` before the first.
    #[wasm_bindgen(getter)]
    pub fn loss(&self) -> f64 {
        self.last_loss
    }

    #[wasm_bindgen(getter)]
    pub fn epoch(&self) -> usize {
        self.session.trainer.epochs_done()
    }

    /// Current `cv` estimate; `undefined` for forward runs.
    #[wasm_bindgen(getter)]
    pub fn cv(&self) -> Option<f64> {
        self.session.trainer.current_cv()
    }

    pub fn profile(&self, t: f64, n: usize) -> Vec<f64> {
        self.session.profile(t, n)
    }

    #[wasm_bindgen(js_name = l2Error)]
    pub fn l2_error(&self) -> Result<f64, JsError> {
        self.session.l2_error().map_err(js_err)
    }
}
