//! C ABI over the zsfuse engine.
//!
//! Every function returns a [`ZsStatus`]. On failure the message is kept in
//! a thread-local slot readable through [`zs_last_error_message`]. Handles
//! are opaque and must be released with their `_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use zsfuse::embed::{audio_key, read_embeddings, write_embeddings, EmbedError, EmbeddingTable};
use zsfuse::fusion::{layer_norm, Fuser, FusionError};
use zsfuse::manifest::LabelSet;
use zsfuse::metrics::{uar, MetricsError, SupportMode};
use zsfuse::prompt::{build_prompt_matrix, PromptMatrix};
use zsfuse::zeroshot::{argmax, cosine, ensemble, score_matrix, ZeroShotError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    NotFound = 5,
    DimensionMismatch = 6,
    NonFinite = 7,
    BufferTooSmall = 8,
    Panic = 99,
}

/// Embedding table handle.
pub struct ZsEmbeddingTable {
    inner: EmbeddingTable,
}

/// Prompt matrix handle, rows flattened template-major.
pub struct ZsPromptMatrix {
    inner: PromptMatrix,
    ids: Vec<CString>,
    texts: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(ZsStatus, String);

impl Failure {
    fn new(status: ZsStatus, msg: impl Into<String>) -> Self {
        Self(status, msg.into())
    }
}

impl From<EmbedError> for Failure {
    fn from(e: EmbedError) -> Self {
        let status = match &e {
            EmbedError::Io { .. } => ZsStatus::Io,
            EmbedError::NonFinite { .. } => ZsStatus::NonFinite,
            EmbedError::WrongLength { .. } | EmbedError::ZeroDim => ZsStatus::DimensionMismatch,
            EmbedError::DuplicateId(_) | EmbedError::IdTooLong(_) => ZsStatus::InvalidArgument,
            _ => ZsStatus::Format,
        };
        Self(status, e.to_string())
    }
}

impl From<ZeroShotError> for Failure {
    fn from(e: ZeroShotError) -> Self {
        let status = match &e {
            ZeroShotError::MissingAudio(_) | ZeroShotError::MissingPrompt(_) => ZsStatus::NotFound,
            ZeroShotError::DimMismatch { .. } => ZsStatus::DimensionMismatch,
            _ => ZsStatus::InvalidArgument,
        };
        Self(status, e.to_string())
    }
}

impl From<FusionError> for Failure {
    fn from(e: FusionError) -> Self {
        Self(ZsStatus::DimensionMismatch, e.to_string())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Self(ZsStatus::InvalidArgument, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> ZsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            ZsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            ZsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(ZsStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(ZsStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(ZsStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, needed: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len < needed {
        return Err(Failure::new(ZsStatus::BufferTooSmall, format!("{name} holds {len}, need {needed}")));
    }
    if p.is_null() {
        return Err(Failure::new(ZsStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(ZsStatus::NullPointer, format!("{name} is null")))
}

unsafe fn write_out<T>(p: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::new(ZsStatus::NullPointer, format!("{name} is null")));
    }
    p.write(value);
    Ok(())
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn zs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn zs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn zs_table_new(
    encoder_id: *const c_char,
    dim: usize,
    out: *mut *mut ZsEmbeddingTable,
) -> ZsStatus {
    guard(|| {
        let id = str_arg(encoder_id, "encoder_id")?;
        let table = EmbeddingTable::new(id, dim)?;
        write_out(out, Box::into_raw(Box::new(ZsEmbeddingTable { inner: table })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn zs_table_read(path: *const c_char, out: *mut *mut ZsEmbeddingTable) -> ZsStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let table = read_embeddings(Path::new(path))?;
        write_out(out, Box::into_raw(Box::new(ZsEmbeddingTable { inner: table })), "out")
    })
}

#[no_mangle]
pub unsafe extern "C" fn zs_table_write(table: *const ZsEmbeddingTable, path: *const c_char) -> ZsStatus {
    guard(|| {
        let table = ref_arg(table, "table")?;
        let path = str_arg(path, "path")?;
        Ok(write_embeddings(&table.inner, Path::new(path))?)
    })
}

#[no_mangle]
pub unsafe extern "C" fn zs_table_insert(
    table: *mut ZsEmbeddingTable,
    id: *const c_char,
    values: *const f32,
    len: usize,
) -> ZsStatus {
    guard(|| {
        let table = table.as_mut().ok_or_else(|| Failure::new(ZsStatus::NullPointer, "table is null"))?;
        let id = str_arg(id, "id")?;
        let values = slice_arg(values, len, "values")?;
        Ok(table.inner.insert(id, values.to_vec())?)
    })
}

/// 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn zs_table_dim(table: *const ZsEmbeddingTable) -> usize {
    table.as_ref().map_or(0, |t| t.inner.dim())
}

/// 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn zs_table_len(table: *const ZsEmbeddingTable) -> usize {
    table.as_ref().map_or(0, |t| t.inner.len())
}

/// Copies the vector stored under `id` into `out`, which must hold at least
/// `zs_table_dim` floats.
#[no_mangle]
pub unsafe extern "C" fn zs_table_get(
    table: *const ZsEmbeddingTable,
    id: *const c_char,
    out: *mut f32,
    out_len: usize,
) -> ZsStatus {
    guard(|| {
        let table = ref_arg(table, "table")?;
        let id = str_arg(id, "id")?;
        let v = table.inner.get(id).ok_or_else(|| Failure::new(ZsStatus::NotFound, format!("no entry {id:?}")))?;
        out_slice(out, out_len, v.len(), "out")?[..v.len()].copy_from_slice(v);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn zs_table_free(table: *mut ZsEmbeddingTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

#[no_mangle]
pub unsafe extern "C" fn zs_cosine(u: *const f64, v: *const f64, len: usize, out: *mut f64) -> ZsStatus {
    guard(|| {
        let c = cosine(slice_arg(u, len, "u")?, slice_arg(v, len, "v")?)?;
        write_out(out, c, "out")
    })
}

/// Writes `len` normalised values into `out`.
#[no_mangle]
pub unsafe extern "C" fn zs_layer_norm(s: *const f64, len: usize, epsilon: f64, out: *mut f64) -> ZsStatus {
    guard(|| {
        let normed = layer_norm(slice_arg(s, len, "s")?, epsilon)?;
        out_slice(out, len, len, "out")?.copy_from_slice(&normed);
        Ok(())
    })
}

/// `out` receives `h_len + s_len` values: `h` followed by its normalised `s`.
#[no_mangle]
pub unsafe extern "C" fn zs_fuse(
    h: *const f64,
    h_len: usize,
    s: *const f64,
    s_len: usize,
    epsilon: f64,
    out: *mut f64,
    out_len: usize,
) -> ZsStatus {
    guard(|| {
        let fuser = Fuser::new(h_len, s_len).with_epsilon(epsilon);
        let z = fuser.fuse("ffi", slice_arg(h, h_len, "h")?, slice_arg(s, s_len, "s")?)?;
        out_slice(out, out_len, z.z.len(), "out")?[..z.z.len()].copy_from_slice(&z.z);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn zs_uar(
    preds: *const usize,
    labels: *const usize,
    len: usize,
    n_classes: usize,
    lenient: bool,
    out: *mut f64,
) -> ZsStatus {
    guard(|| {
        let mode = if lenient { SupportMode::Lenient } else { SupportMode::Strict };
        let value = uar(slice_arg(preds, len, "preds")?, slice_arg(labels, len, "labels")?, n_classes, mode)?;
        write_out(out, value, "out")
    })
}

/// Builds the prompt matrix for comma-separated class codes at text repeat `t`.
#[no_mangle]
pub unsafe extern "C" fn zs_prompt_matrix_new(
    classes: *const c_char,
    t: u32,
    out: *mut *mut ZsPromptMatrix,
) -> ZsStatus {
    guard(|| {
        let classes = str_arg(classes, "classes")?;
        let set = LabelSet::parse_codes(classes).map_err(|e| Failure::new(ZsStatus::InvalidArgument, e.to_string()))?;
        let inner = build_prompt_matrix(&set, t).map_err(|e| Failure::new(ZsStatus::InvalidArgument, e.to_string()))?;
        let cstr = |s: &str| CString::new(s).map_err(|_| Failure::new(ZsStatus::InvalidArgument, "interior NUL in prompt"));
        let ids = inner.iter().map(|p| cstr(&p.prompt_id)).collect::<Result<_, _>>()?;
        let texts = inner.iter().map(|p| cstr(&p.text)).collect::<Result<_, _>>()?;
        write_out(out, Box::into_raw(Box::new(ZsPromptMatrix { inner, ids, texts })), "out")
    })
}

/// Number of prompts (templates × classes); 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn zs_prompt_matrix_len(matrix: *const ZsPromptMatrix) -> usize {
    matrix.as_ref().map_or(0, |m| m.ids.len())
}

/// Null for a null handle or an index past the end. Owned by the handle.
#[no_mangle]
pub unsafe extern "C" fn zs_prompt_matrix_id(matrix: *const ZsPromptMatrix, index: usize) -> *const c_char {
    matrix.as_ref().and_then(|m| m.ids.get(index)).map_or(ptr::null(), |s| s.as_ptr())
}

/// Null for a null handle or an index past the end. Owned by the handle.
#[no_mangle]
pub unsafe extern "C" fn zs_prompt_matrix_text(matrix: *const ZsPromptMatrix, index: usize) -> *const c_char {
    matrix.as_ref().and_then(|m| m.texts.get(index)).map_or(ptr::null(), |s| s.as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn zs_prompt_matrix_free(matrix: *mut ZsPromptMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Ensemble score vector of one utterance; `out` receives one value per
/// class.
#[no_mangle]
pub unsafe extern "C" fn zs_score_utterance(
    audio: *const ZsEmbeddingTable,
    utterance_id: *const c_char,
    a: u32,
    prompts: *const ZsPromptMatrix,
    text: *const ZsEmbeddingTable,
    out: *mut f64,
    out_len: usize,
) -> ZsStatus {
    guard(|| {
        let audio = ref_arg(audio, "audio")?;
        let prompts = ref_arg(prompts, "prompts")?;
        let text = ref_arg(text, "text")?;
        let id = str_arg(utterance_id, "utterance_id")?;
        let key = audio_key(id, a);
        let vector = audio.inner.get_f64(&key).ok_or(ZeroShotError::MissingAudio(key))?;
        let s = ensemble(&score_matrix(id, &vector, &prompts.inner, &text.inner)?).s;
        out_slice(out, out_len, s.len(), "out")?[..s.len()].copy_from_slice(&s);
        Ok(())
    })
}

/// Index of the largest score, lowest index on ties.
#[no_mangle]
pub unsafe extern "C" fn zs_predict(s: *const f64, len: usize, out: *mut usize) -> ZsStatus {
    guard(|| {
        let s = slice_arg(s, len, "s")?;
        if s.is_empty() {
            return Err(Failure::new(ZsStatus::InvalidArgument, "empty score vector"));
        }
        write_out(out, argmax(s), "out")
    })
}
