//! C ABI over the deterministic parts of `stars-core`: cosine, P@k, top-k
//! selection, hash embeddings, lexicon lookup and TF-IDF ranking.
//!
//! Every fallible function returns a [`StarsStatus`]. A failure message
//! is kept per thread until the next call and can be fetched with [`stars_last_error_message`].
//! Strings returned by this library must be released with
//! [`stars_string_free`]; handles with their matching `*_free`.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stars_core::embedding::{EmbeddingProvider, EmbeddingVector, HashProvider};
use stars_core::evaluation::precision_at_k;
use stars_core::lexicon::TechnologyLexicon;
use stars_core::ranking::{cosine_similarity, rank_technologies, tfidf_rank, Direction, RankedEntry, RankedList, TfIdfIndex};
use stars_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StarsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    Io = 5,
    DimensionMismatch = 6,
    ZeroNorm = 7,
    EmptyPool = 8,
    NotFound = 9,
    BufferTooSmall = 10,
    Panic = 11,
    Internal = 12,
}

/// Loaded technology lexicon.
pub struct StarsLexicon(TechnologyLexicon);

/// Deterministic feature-hashing embedder.
pub struct StarsHashEmbedder(HashProvider);

/// TF-IDF index over caller-supplied documents; items are addressed by
/// their position at build time.
pub struct StarsTfIdf {
    index: TfIdfIndex,
    position: HashMap<String, usize>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(StarsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Parse { .. } | Error::DuplicateId { .. } | Error::Json(_) => StarsStatus::Parse,
            Error::Io { .. } => StarsStatus::Io,
            Error::DimensionMismatch { .. } => StarsStatus::DimensionMismatch,
            Error::ZeroNorm => StarsStatus::ZeroNorm,
            Error::EmptyPool(_) => StarsStatus::EmptyPool,
            Error::Invalid(_) | Error::Config(_) => StarsStatus::InvalidArgument,
            _ => StarsStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: StarsStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', "\\0")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> StarsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            StarsStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("panic inside stars library".into());
            StarsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(StarsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(StarsStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(StarsStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn str_array(p: *const *const c_char, len: usize, what: &str) -> Result<Vec<String>, Failure> {
    slice_arg(p, len, what)?
        .iter()
        .enumerate()
        .map(|(i, s)| str_arg(*s, &format!("{what}[{i}]")).map(str::to_string))
        .collect()
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(StarsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(StarsStatus::NullPointer, format!("{what} is null")))
}

fn owned(s: &str) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

fn vector(values: &[f64]) -> Result<EmbeddingVector, Failure> {
    Ok(EmbeddingVector::new(values.to_vec(), "ffi")?)
}

// Zero-padded positions sort like the integers they encode, so the
// library's id tie-break becomes a position tie-break.
fn position_id(i: usize) -> String {
    format!("{i:020}")
}

/// Why the most recent call on this thread failed, or null if it
/// succeeded. Free with `stars_string_free`.
#[no_mangle]
pub extern "C" fn stars_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn stars_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Cosine similarity of two vectors of length `len`.
///
/// # Safety
/// `a` and `b` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stars_cosine(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> StarsStatus {
    guard(|| {
        let a = vector(slice_arg(a, len, "a")?)?;
        let b = vector(slice_arg(b, len, "b")?)?;
        *out_arg(out, "out")? = cosine_similarity(&a, &b)?;
        Ok(())
    })
}

/// Precision at `k` of a ranked id list against a relevant id set.
/// `out_degenerate` (may be null) is set when nothing was retrieved.
///
/// # Safety
/// Array arguments must hold the stated number of NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn stars_precision_at_k(
    ranked: *const *const c_char,
    n_ranked: usize,
    relevant: *const *const c_char,
    n_relevant: usize,
    k: usize,
    out: *mut f64,
    out_degenerate: *mut bool,
) -> StarsStatus {
    guard(|| {
        let ids = str_array(ranked, n_ranked, "ranked")?;
        let relevant: BTreeSet<String> = str_array(relevant, n_relevant, "relevant")?.into_iter().collect();
        let list = RankedList {
            query_id: "ffi".into(),
            direction: Direction::CompanyToTechnology,
            entries: ids
                .into_iter()
                .enumerate()
                .map(|(i, item_id)| RankedEntry { item_id, score: -(i as f64) })
                .collect(),
        };
        let p = precision_at_k(&relevant, &list, k);
        *out_arg(out, "out")? = p.value;
        if let Some(d) = out_degenerate.as_mut() {
            *d = p.degenerate;
        }
        Ok(())
    })
}

/// Best `k` rows of a row-major `n x dim` pool by cosine to `query`, ties
/// broken by lower row index. Writes up to `k` entries and their count.
///
/// # Safety
/// `pool` must hold `n * dim` doubles; the output arrays must hold `k`.
#[no_mangle]
pub unsafe extern "C" fn stars_top_k(
    query: *const f64,
    dim: usize,
    pool: *const f64,
    n: usize,
    k: usize,
    out_indices: *mut usize,
    out_scores: *mut f64,
    out_len: *mut usize,
) -> StarsStatus {
    guard(|| {
        if dim == 0 {
            return Err(fail(StarsStatus::InvalidArgument, "dim must be positive"));
        }
        let total = n
            .checked_mul(dim)
            .ok_or_else(|| fail(StarsStatus::InvalidArgument, "n * dim overflows"))?;
        let query = vector(slice_arg(query, dim, "query")?)?;
        let rows = slice_arg(pool, total, "pool")?;
        let items = rows
            .chunks(dim)
            .enumerate()
            .map(|(i, row)| Ok((position_id(i), vector(row)?)))
            .collect::<Result<BTreeMap<_, _>, Failure>>()?;
        let ranked = rank_technologies("ffi", &query, &items, k)?;
        let len = out_arg(out_len, "out_len")?;
        write_entries(&ranked, |id| id.parse().ok(), out_indices, out_scores)?;
        *len = ranked.len();
        Ok(())
    })
}

unsafe fn write_entries(
    ranked: &RankedList,
    index_of: impl Fn(&str) -> Option<usize>,
    out_indices: *mut usize,
    out_scores: *mut f64,
) -> Result<(), Failure> {
    if ranked.is_empty() {
        return Ok(());
    }
    if out_indices.is_null() || out_scores.is_null() {
        return Err(fail(StarsStatus::NullPointer, "output arrays are null"));
    }
    for (slot, e) in ranked.entries.iter().enumerate() {
        let idx = index_of(&e.item_id).ok_or_else(|| fail(StarsStatus::Internal, "lost item position"))?;
        *out_indices.add(slot) = idx;
        *out_scores.add(slot) = e.score;
    }
    Ok(())
}

/// Load a lexicon from a JSONL file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stars_lexicon_load(path: *const c_char, out: *mut *mut StarsLexicon) -> StarsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let lexicon = TechnologyLexicon::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(StarsLexicon(lexicon)));
        Ok(())
    })
}

/// Number of technologies in the lexicon; 0 for null.
///
/// # Safety
/// `lexicon` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stars_lexicon_len(lexicon: *const StarsLexicon) -> usize {
    lexicon.as_ref().map_or(0, |l| l.0.len())
}

/// Id of the technology a surface form refers to. Returns
/// `STARS_STATUS_NOT_FOUND` when the form is unknown. Free the id with
/// `stars_string_free`.
///
/// # Safety
/// `lexicon` must be a live handle; `surface_form` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn stars_lexicon_lookup(
    lexicon: *const StarsLexicon,
    surface_form: *const c_char,
    out_id: *mut *mut c_char,
) -> StarsStatus {
    guard(|| {
        let lexicon = handle(lexicon, "lexicon")?;
        let form = str_arg(surface_form, "surface_form")?;
        let out = out_arg(out_id, "out_id")?;
        let tech = lexicon.0.lookup(form).ok_or_else(|| fail(StarsStatus::NotFound, format!("{form:?} is not in the lexicon")))?;
        *out = owned(&tech.id);
        Ok(())
    })
}

/// # Safety
/// `lexicon` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn stars_lexicon_free(lexicon: *mut StarsLexicon) {
    if !lexicon.is_null() {
        drop(Box::from_raw(lexicon));
    }
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stars_hash_embedder_new(dimension: usize, seed: u64, out: *mut *mut StarsHashEmbedder) -> StarsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let provider = HashProvider::new(dimension, seed)?;
        *out = Box::into_raw(Box::new(StarsHashEmbedder(provider)));
        Ok(())
    })
}

/// # Safety
/// `embedder` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stars_hash_embedder_dimension(embedder: *const StarsHashEmbedder) -> usize {
    embedder.as_ref().map_or(0, |e| e.0.dimension())
}

/// Embed `text` into `out`, which must have room for `capacity` doubles
/// (at least the embedder's dimension).
///
/// # Safety
/// `embedder` must be a live handle; `text` NUL-terminated; `out` must hold
/// `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn stars_hash_embed(
    embedder: *const StarsHashEmbedder,
    text: *const c_char,
    out: *mut f64,
    capacity: usize,
) -> StarsStatus {
    guard(|| {
        let embedder = handle(embedder, "embedder")?;
        let text = str_arg(text, "text")?;
        let dim = embedder.0.dimension();
        if capacity < dim {
            return Err(fail(StarsStatus::BufferTooSmall, format!("need {dim} doubles, got {capacity}")));
        }
        if out.is_null() {
            return Err(fail(StarsStatus::NullPointer, "out is null"));
        }
        let v = embedder.0.embed(text)?;
        ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
        Ok(())
    })
}

/// # Safety
/// `embedder` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn stars_hash_embedder_free(embedder: *mut StarsHashEmbedder) {
    if !embedder.is_null() {
        drop(Box::from_raw(embedder));
    }
}

/// Index `n` documents. Ids must be unique.
///
/// # Safety
/// `ids` and `texts` must each hold `n` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn stars_tfidf_new(
    ids: *const *const c_char,
    texts: *const *const c_char,
    n: usize,
    out: *mut *mut StarsTfIdf,
) -> StarsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let ids = str_array(ids, n, "ids")?;
        let texts = str_array(texts, n, "texts")?;
        let mut position = HashMap::with_capacity(n);
        for (i, id) in ids.iter().enumerate() {
            if position.insert(id.clone(), i).is_some() {
                return Err(fail(StarsStatus::InvalidArgument, format!("duplicate id {id:?}")));
            }
        }
        let index = TfIdfIndex::build(ids.iter().map(String::as_str).zip(texts.iter().map(String::as_str)))?;
        *out = Box::into_raw(Box::new(StarsTfIdf { index, position }));
        Ok(())
    })
}

/// Normalized weight of `token` in document `id`; 0 when the document
/// lacks the token, `STARS_STATUS_NOT_FOUND` when either is unknown.
///
/// # Safety
/// `index` must be a live handle; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn stars_tfidf_weight(
    index: *const StarsTfIdf,
    id: *const c_char,
    token: *const c_char,
    out: *mut f64,
) -> StarsStatus {
    guard(|| {
        let index = handle(index, "index")?;
        let (id, token) = (str_arg(id, "id")?, str_arg(token, "token")?);
        let out = out_arg(out, "out")?;
        *out = index
            .index
            .weight(id, token)
            .ok_or_else(|| fail(StarsStatus::NotFound, format!("unknown document {id:?} or token {token:?}")))?;
        Ok(())
    })
}

/// Rank indexed documents by TF-IDF cosine to `query`. Writes up to `k`
/// document positions (build order) and scores, and their count. A query
/// with no known token yields zero results.
///
/// # Safety
/// `index` must be a live handle; output arrays must hold `k` entries.
#[no_mangle]
pub unsafe extern "C" fn stars_tfidf_rank(
    index: *const StarsTfIdf,
    query: *const c_char,
    k: usize,
    out_indices: *mut usize,
    out_scores: *mut f64,
    out_len: *mut usize,
) -> StarsStatus {
    guard(|| {
        let index = handle(index, "index")?;
        let query = str_arg(query, "query")?;
        let len = out_arg(out_len, "out_len")?;
        let ranked = tfidf_rank(&index.index, "ffi", Direction::CompanyToTechnology, query, k)?;
        write_entries(&ranked, |id| index.position.get(id).copied(), out_indices, out_scores)?;
        *len = ranked.len();
        Ok(())
    })
}

/// # Safety
/// `index` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn stars_tfidf_free(index: *mut StarsTfIdf) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}
