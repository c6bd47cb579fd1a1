//! C interface to persona-graph.
//!
//! Handles are opaque and owned by the caller once returned; free them with
//! the matching `*_free` function. Every fallible call returns a
//! [`PgStatus`]; on failure the message is available from
//! [`pg_last_error`] on the same thread until the next failing call.
//! Strings returned through `char **` out-parameters must be released
//! with [`pg_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use persona_graph::checkpoint::Checkpoint;
use persona_graph::config::Settings;
use persona_graph::graph::{add_post, build_graph, UserGraph};
use persona_graph::pipeline::{macro_f1, predict_user};
use persona_graph::providers::{build_provider, Provider};
use persona_graph::Error;

/// Call outcome; the nonzero values match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgStatus {
    Ok = 0,
    /// Panic or other internal failure.
    Internal = 1,
    Input = 2,
    Numeric = 3,
    Transport = 4,
    Consistency = 5,
    /// Null pointer or invalid UTF-8 argument.
    Usage = 64,
}

/// A loaded checkpoint with its provider.
pub struct PgModel {
    checkpoint: Checkpoint,
    settings: Settings,
    provider: Arc<dyn Provider>,
}

/// One user's graph plus the settings it was built with.
pub struct PgGraph {
    graph: UserGraph,
    settings: Settings,
    provider: Arc<dyn Provider>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> PgStatus {
    match err.exit_code() {
        3 => PgStatus::Numeric,
        4 => PgStatus::Transport,
        5 => PgStatus::Consistency,
        _ => PgStatus::Input,
    }
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PgStatus::Ok,
        Ok(Err(Failure::Usage(msg))) => {
            set_error(msg);
            PgStatus::Usage
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            PgStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Usage(format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Usage(format!("{name} is not valid UTF-8")))
}

unsafe fn posts_arg(posts: *const *const c_char, count: usize) -> Result<Vec<String>, Failure> {
    if posts.is_null() && count > 0 {
        return Err(Failure::Usage("posts is null".into()));
    }
    (0..count)
        .map(|i| str_arg(*posts.add(i), "post").map(str::to_owned))
        .collect()
}

fn out_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).map_err(|_| Failure::Usage("output contains NUL".into()))?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn check_out<T>(out: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Usage("output pointer is null".into()));
    }
    Ok(())
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn pg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pg_model_load(path: *const c_char, out: *mut *mut PgModel) -> PgStatus {
    guard(|| {
        check_out(out)?;
        let path = str_arg(path, "path")?;
        let checkpoint = Checkpoint::load(Path::new(path))?;
        let settings = checkpoint.settings()?;
        let provider = build_provider(&settings.provider)?;
        let model = Box::new(PgModel {
            checkpoint,
            settings,
            provider,
        });
        *out = Box::into_raw(model);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`pg_model_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn pg_model_free(model: *mut PgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Predicts a type code; writes `{"type": ..., "probs": ...}` JSON.
///
/// # Safety
/// `posts` must point to `count` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn pg_predict(
    model: *const PgModel,
    posts: *const *const c_char,
    count: usize,
    out_json: *mut *mut c_char,
) -> PgStatus {
    guard(|| {
        check_out(out_json)?;
        let model = model.as_ref().ok_or_else(|| Failure::Usage("model is null".into()))?;
        let posts = posts_arg(posts, count)?;
        let prediction = predict_user(
            &model.checkpoint.params,
            &posts,
            model.provider.as_ref(),
            &model.settings.edge,
        )?;
        out_string(out_json, serde_json::to_string(&prediction).map_err(Error::from)?)
    })
}

/// Builds a graph. `config` is null or flat `key = value` text; `model`
/// is null (uniform attention) or supplies the trained attention vector
/// and base settings.
///
/// # Safety
/// Pointer arguments must be valid as described.
#[no_mangle]
pub unsafe extern "C" fn pg_graph_build(
    model: *const PgModel,
    config: *const c_char,
    posts: *const *const c_char,
    count: usize,
    out: *mut *mut PgGraph,
) -> PgStatus {
    guard(|| {
        check_out(out)?;
        let model = model.as_ref();
        let mut settings = model.map_or_else(Settings::default, |m| m.settings.clone());
        if !config.is_null() {
            settings.apply_text(str_arg(config, "config")?)?;
        }
        settings.validate()?;
        let posts = posts_arg(posts, count)?;
        let provider = build_provider(&settings.provider)?;
        let w = match model {
            Some(m) => m.checkpoint.params.user_attention.clone(),
            None => {
                let first = posts
                    .first()
                    .ok_or_else(|| Error::EmptyInput("no posts".into()))?;
                vec![0.0; provider.embed_batch(std::slice::from_ref(first))?.dim()]
            }
        };
        let graph = build_graph(&posts, provider.as_ref(), &settings.edge, &w)?;
        *out = Box::into_raw(Box::new(PgGraph {
            graph,
            settings,
            provider,
        }));
        Ok(())
    })
}

/// Adds one post in place.
///
/// # Safety
/// `graph` must be a live handle; `post` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pg_graph_add_post(graph: *mut PgGraph, post: *const c_char) -> PgStatus {
    guard(|| {
        let g = graph.as_mut().ok_or_else(|| Failure::Usage("graph is null".into()))?;
        let post = str_arg(post, "post")?;
        let w = g.graph.attention_vector.clone();
        g.graph = add_post(&g.graph, post, g.provider.as_ref(), &g.settings.edge, &w)?;
        Ok(())
    })
}

/// Node count including the user node; 0 for a null handle.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pg_graph_node_count(graph: *const PgGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.graph.node_count())
}

/// Writes the graph export JSON.
///
/// # Safety
/// `graph` must be a live handle; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_graph_to_json(graph: *const PgGraph, out_json: *mut *mut c_char) -> PgStatus {
    guard(|| {
        check_out(out_json)?;
        let g = graph.as_ref().ok_or_else(|| Failure::Usage("graph is null".into()))?;
        out_string(out_json, serde_json::to_string(&g.graph.to_export()).map_err(Error::from)?)
    })
}

/// # Safety
/// `graph` must be null or a handle from [`pg_graph_build`], freed once.
#[no_mangle]
pub unsafe extern "C" fn pg_graph_free(graph: *mut PgGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Macro-F1 (%) of binary predictions against labels.
///
/// # Safety
/// `preds` and `labels` must each point to `count` bytes.
#[no_mangle]
pub unsafe extern "C" fn pg_macro_f1(
    preds: *const u8,
    labels: *const u8,
    count: usize,
    out: *mut f64,
) -> PgStatus {
    guard(|| {
        check_out(out)?;
        if count > 0 && (preds.is_null() || labels.is_null()) {
            return Err(Failure::Usage("preds or labels is null".into()));
        }
        let (p, y) = if count == 0 {
            (&[][..], &[][..])
        } else {
            (
                std::slice::from_raw_parts(preds, count),
                std::slice::from_raw_parts(labels, count),
            )
        };
        *out = macro_f1(p, y)?;
        Ok(())
    })
}
