//! C ABI over `amod_core`.
//!
//! Every function returns an [`AmodStatus`]; on failure a message is kept in
//! thread-local storage and can be read with [`amod_last_error`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use amod_core::agents::{ActionMode, SacAgent};
use amod_core::env::{AmodEnv as CoreEnv, EnvConfig, Observation};
use amod_core::nn::Checkpoint;
use amod_core::scenario::{load_scenario, make_synthetic_scenario, Scenario, SyntheticSpec};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AmodStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Environment = 5,
    EpisodeDone = 6,
    Panic = 7,
}

/// Loaded or generated scenario.
pub struct AmodScenario(Arc<Scenario>);

/// Simulator bound to a scenario, with the current observation.
pub struct AmodEnv {
    env: CoreEnv,
    obs: Option<Observation>,
}

/// Trained policy restored from a checkpoint.
pub struct AmodPolicy(SacAgent);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: AmodStatus, msg: impl Into<String>) -> AmodStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn guard(f: impl FnOnce() -> Result<(), (AmodStatus, String)>) -> AmodStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AmodStatus::Ok,
        Ok(Err((status, msg))) => fail(status, msg),
        Err(e) => {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            fail(AmodStatus::Panic, msg.unwrap_or_else(|| "panic".into()))
        }
    }
}

fn null(what: &str) -> (AmodStatus, String) {
    (AmodStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (AmodStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (AmodStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (AmodStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn amod_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Loads a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn amod_scenario_load(path: *const c_char, out: *mut *mut AmodScenario) -> AmodStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let sc = load_scenario(Path::new(path)).map_err(|e| (AmodStatus::Io, e.to_string()))?;
        *out = Box::into_raw(Box::new(AmodScenario(Arc::new(sc))));
        Ok(())
    })
}

/// Generates a synthetic scenario from a JSON spec (missing fields take
/// their defaults; null means all defaults).
///
/// # Safety
/// `spec_json` must be null or NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn amod_scenario_synthetic(spec_json: *const c_char, seed: u64, out: *mut *mut AmodScenario) -> AmodStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let spec = if spec_json.is_null() {
            SyntheticSpec::default()
        } else {
            serde_json::from_str(str_arg(spec_json, "spec_json")?).map_err(|e| (AmodStatus::InvalidArgument, e.to_string()))?
        };
        let sc = make_synthetic_scenario(&spec, seed).map_err(|e| (AmodStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(AmodScenario(Arc::new(sc))));
        Ok(())
    })
}

/// Station count, fleet size and episode length.
///
/// # Safety
/// `scenario` must come from this library; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn amod_scenario_dims(
    scenario: *const AmodScenario,
    n_stations: *mut usize,
    fleet_size: *mut u32,
    episode_len: *mut usize,
) -> AmodStatus {
    guard(|| {
        let sc = &scenario.as_ref().ok_or_else(|| null("scenario"))?.0;
        if let Some(p) = n_stations.as_mut() {
            *p = sc.n_stations();
        }
        if let Some(p) = fleet_size.as_mut() {
            *p = sc.fleet_size();
        }
        if let Some(p) = episode_len.as_mut() {
            *p = sc.episode_len();
        }
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn amod_scenario_free(scenario: *mut AmodScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Creates an environment; the scenario handle may be freed afterwards.
///
/// # Safety
/// `scenario` must come from this library; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn amod_env_new(scenario: *const AmodScenario, forecast_sigma: f64, out: *mut *mut AmodEnv) -> AmodStatus {
    guard(|| {
        let sc = scenario.as_ref().ok_or_else(|| null("scenario"))?.0.clone();
        let out = out_arg(out, "out")?;
        if !(forecast_sigma >= 0.0 && forecast_sigma.is_finite()) {
            return Err((AmodStatus::InvalidArgument, format!("forecast_sigma {forecast_sigma} must be finite and non-negative")));
        }
        let env = CoreEnv::new(sc, EnvConfig { forecast_sigma });
        *out = Box::into_raw(Box::new(AmodEnv { env, obs: None }));
        Ok(())
    })
}

/// Starts an episode with the given seed.
///
/// # Safety
/// `env` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn amod_env_reset(env: *mut AmodEnv, seed: u64) -> AmodStatus {
    guard(|| {
        let h = out_arg(env, "env")?;
        h.obs = Some(h.env.reset(seed));
        Ok(())
    })
}

/// Applies a desired distribution of `len` entries and advances one step.
/// `reward_cents` and `done` may be null.
///
/// # Safety
/// `action` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn amod_env_step(
    env: *mut AmodEnv,
    action: *const f64,
    len: usize,
    reward_cents: *mut i64,
    done: *mut bool,
) -> AmodStatus {
    guard(|| {
        let h = out_arg(env, "env")?;
        if action.is_null() {
            return Err(null("action"));
        }
        if h.obs.is_none() {
            return Err((AmodStatus::InvalidArgument, "environment was not reset".into()));
        }
        let a = std::slice::from_raw_parts(action, len);
        let r = h.env.step(a).map_err(|e| match e {
            amod_core::env::EnvError::EpisodeDone => (AmodStatus::EpisodeDone, e.to_string()),
            _ => (AmodStatus::Environment, e.to_string()),
        })?;
        if let Some(p) = reward_cents.as_mut() {
            *p = r.reward_cents;
        }
        if let Some(p) = done.as_mut() {
            *p = r.done;
        }
        h.obs = Some(r.next_obs);
        Ok(())
    })
}

/// Writes idle vehicle counts per station into `buf` (`len` ≥ stations).
///
/// # Safety
/// `buf` must point to `len` writable u32 values.
#[no_mangle]
pub unsafe extern "C" fn amod_env_idle(env: *const AmodEnv, buf: *mut u32, len: usize) -> AmodStatus {
    guard(|| {
        let h = env.as_ref().ok_or_else(|| null("env"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let idle = &h.env.state().idle;
        if len < idle.len() {
            return Err((AmodStatus::BufferTooSmall, format!("need {} entries, got {len}", idle.len())));
        }
        std::ptr::copy_nonoverlapping(idle.as_ptr(), buf, idle.len());
        Ok(())
    })
}

/// # Safety
/// `env` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn amod_env_free(env: *mut AmodEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Restores a policy from a checkpoint file; `seed` drives sampled actions.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn amod_policy_load(path: *const c_char, seed: u64, out: *mut *mut AmodPolicy) -> AmodStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let ck = Checkpoint::load(Path::new(path)).map_err(|e| (AmodStatus::Io, e.to_string()))?;
        let agent = SacAgent::from_checkpoint(&ck, seed).map_err(|e| (AmodStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(AmodPolicy(agent)));
        Ok(())
    })
}

/// Desired distribution for the environment's current observation: the
/// Dirichlet mean when `sample` is false, a draw otherwise.
///
/// # Safety
/// `action` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn amod_policy_act(
    policy: *mut AmodPolicy,
    env: *const AmodEnv,
    sample: bool,
    action: *mut f64,
    len: usize,
) -> AmodStatus {
    guard(|| {
        let p = out_arg(policy, "policy")?;
        let h = env.as_ref().ok_or_else(|| null("env"))?;
        if action.is_null() {
            return Err(null("action"));
        }
        let obs = h.obs.as_ref().ok_or_else(|| (AmodStatus::InvalidArgument, "environment was not reset".to_string()))?;
        if obs.features.cols() != p.0.n_features() {
            return Err((
                AmodStatus::InvalidArgument,
                format!("policy expects {} features per station, observation has {}", p.0.n_features(), obs.features.cols()),
            ));
        }
        let mode = if sample { ActionMode::Sample } else { ActionMode::Mean };
        let a = p.0.select_action(obs, mode);
        if len < a.len() {
            return Err((AmodStatus::BufferTooSmall, format!("need {} entries, got {len}", a.len())));
        }
        std::ptr::copy_nonoverlapping(a.as_ptr(), action, a.len());
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn amod_policy_free(policy: *mut AmodPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}
