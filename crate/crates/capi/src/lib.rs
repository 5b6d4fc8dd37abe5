//! C ABI for the core coder: opaque handles, integer error codes, and
//! explicit free functions. See `include/bbcodec.h` for the header.

use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bbcodec::bbans::init_random_bits;
use bbcodec::container::{read_bbc1, write_bbc1};
use bbcodec::vrans::{pop_uniform_bits, push_uniform_bits};
use bbcodec::{CoderError, Message, Precisions, QuantizedDistribution};

pub const BBC_OK: i32 = 0;
pub const BBC_ERR_ARG: i32 = 1;
pub const BBC_ERR_FORMAT: i32 = 2;
pub const BBC_ERR_MODEL: i32 = 3;
pub const BBC_ERR_UNDERFLOW: i32 = 4;
pub const BBC_ERR_PANIC: i32 = 5;

fn code_of(e: &CoderError) -> i32 {
    match e {
        CoderError::Underflow { .. } | CoderError::InsufficientInitBits { .. } => {
            BBC_ERR_UNDERFLOW
        }
        CoderError::ModelMismatch(_) => BBC_ERR_MODEL,
        CoderError::Format(_) => BBC_ERR_FORMAT,
        _ => BBC_ERR_ARG,
    }
}

/// Opaque message handle.
pub struct BbcMessage(Message);
/// Opaque quantized-distribution handle.
pub struct BbcDist(QuantizedDistribution);

fn guarded<F: FnOnce() -> i32>(f: F) -> i32 {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(BBC_ERR_PANIC)
}

/// Create an empty message with the given precisions. Returns null on
/// invalid precisions.
#[no_mangle]
pub extern "C" fn bbc_message_new(r_s: u32, r_t: u32, r: u32) -> *mut BbcMessage {
    match Precisions::new(r_s, r_t, r) {
        Ok(p) => Box::into_raw(Box::new(BbcMessage(Message::init(p)))),
        Err(_) => ptr::null_mut(),
    }
}

/// Create a message seeded with `bits` reproducible uniform random bits.
#[no_mangle]
pub extern "C" fn bbc_message_random(
    bits: u64,
    seed: u64,
    r_s: u32,
    r_t: u32,
    r: u32,
) -> *mut BbcMessage {
    match Precisions::new(r_s, r_t, r) {
        Ok(p) => Box::into_raw(Box::new(BbcMessage(init_random_bits(bits, seed, p)))),
        Err(_) => ptr::null_mut(),
    }
}

/// # Safety
/// `msg` must be a pointer returned by a `bbc_message_*` constructor, not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn bbc_message_free(msg: *mut BbcMessage) {
    if !msg.is_null() {
        drop(Box::from_raw(msg));
    }
}

/// Effective message length in bits (`log2(head) + r_t * |tail|`).
///
/// # Safety
/// `msg` must be a live message handle.
#[no_mangle]
pub unsafe extern "C" fn bbc_message_effective_length(msg: *const BbcMessage) -> f64 {
    if msg.is_null() {
        return f64::NAN;
    }
    (*msg).0.effective_length()
}

/// Build a distribution from `len` positive weights summing to `2^r`.
/// Returns null on invalid input.
///
/// # Safety
/// `weights` must point to `len` readable `uint64_t`s.
#[no_mangle]
pub unsafe extern "C" fn bbc_dist_new(weights: *const u64, len: usize, r: u32) -> *mut BbcDist {
    if weights.is_null() || len == 0 {
        return ptr::null_mut();
    }
    let slice = std::slice::from_raw_parts(weights, len);
    match QuantizedDistribution::new(slice, r) {
        Ok(d) => Box::into_raw(Box::new(BbcDist(d))),
        Err(_) => ptr::null_mut(),
    }
}

/// # Safety
/// `dist` must be a pointer returned by `bbc_dist_new`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bbc_dist_free(dist: *mut BbcDist) {
    if !dist.is_null() {
        drop(Box::from_raw(dist));
    }
}

/// Push one symbol. Returns BBC_OK or an error code.
///
/// # Safety
/// `msg` and `dist` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn bbc_push(msg: *mut BbcMessage, dist: *const BbcDist, symbol: u64) -> i32 {
    if msg.is_null() || dist.is_null() {
        return BBC_ERR_ARG;
    }
    guarded(|| match (*msg).0.push(symbol, &(*dist).0) {
        Ok(()) => BBC_OK,
        Err(e) => code_of(&e),
    })
}

/// Pop one symbol into `*symbol`. Exact inverse of `bbc_push`.
///
/// # Safety
/// `msg` and `dist` must be live handles; `symbol` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bbc_pop(msg: *mut BbcMessage, dist: *const BbcDist, symbol: *mut u64) -> i32 {
    if msg.is_null() || dist.is_null() || symbol.is_null() {
        return BBC_ERR_ARG;
    }
    guarded(|| match (*msg).0.pop(&(*dist).0) {
        Ok(x) => {
            *symbol = x;
            BBC_OK
        }
        Err(e) => code_of(&e),
    })
}

/// Push the low `nbits` bits of `value` as uniform bits.
///
/// # Safety
/// `msg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bbc_push_uniform(msg: *mut BbcMessage, value: u64, nbits: u32) -> i32 {
    if msg.is_null() || nbits == 0 || nbits > 64 {
        return BBC_ERR_ARG;
    }
    guarded(|| match push_uniform_bits(&mut (*msg).0, value, nbits) {
        Ok(()) => BBC_OK,
        Err(e) => code_of(&e),
    })
}

/// Pop `nbits` uniform bits into `*value`. Inverse of `bbc_push_uniform`.
///
/// # Safety
/// `msg` must be a live handle; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bbc_pop_uniform(msg: *mut BbcMessage, nbits: u32, value: *mut u64) -> i32 {
    if msg.is_null() || value.is_null() || nbits == 0 || nbits > 64 {
        return BBC_ERR_ARG;
    }
    guarded(|| match pop_uniform_bits(&mut (*msg).0, nbits) {
        Ok(v) => {
            *value = v;
            BBC_OK
        }
        Err(e) => code_of(&e),
    })
}

/// Serialize the message to its byte container. The buffer is allocated by
/// the library; release it with `bbc_buffer_free`.
///
/// # Safety
/// `msg` must be a live handle; `out` and `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bbc_message_serialize(
    msg: *const BbcMessage,
    out: *mut *mut u8,
    out_len: *mut usize,
) -> i32 {
    if msg.is_null() || out.is_null() || out_len.is_null() {
        return BBC_ERR_ARG;
    }
    guarded(|| {
        let bytes = write_bbc1(&(*msg).0).into_boxed_slice();
        *out_len = bytes.len();
        *out = Box::into_raw(bytes) as *mut u8;
        BBC_OK
    })
}

/// Reconstruct a message from container bytes; `r` is the distribution
/// precision to run the message at.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bbc_message_deserialize(
    bytes: *const u8,
    len: usize,
    r: u32,
    out: *mut *mut BbcMessage,
) -> i32 {
    if bytes.is_null() || out.is_null() {
        return BBC_ERR_ARG;
    }
    guarded(|| {
        let slice = std::slice::from_raw_parts(bytes, len);
        match read_bbc1(slice, r) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(BbcMessage(m)));
                BBC_OK
            }
            Err(e) => code_of(&e),
        }
    })
}

/// # Safety
/// `buf`/`len` must come from `bbc_message_serialize`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bbc_buffer_free(buf: *mut u8, len: usize) {
    if !buf.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(buf, len)));
    }
}

/// Static, null-terminated description of an error code.
#[no_mangle]
pub extern "C" fn bbc_strerror(code: i32) -> *const c_char {
    let s: &'static [u8] = match code {
        BBC_OK => b"ok\0",
        BBC_ERR_ARG => b"invalid argument\0",
        BBC_ERR_FORMAT => b"malformed container or stream\0",
        BBC_ERR_MODEL => b"model mismatch\0",
        BBC_ERR_UNDERFLOW => b"message underflow: not enough information to pop\0",
        BBC_ERR_PANIC => b"internal error\0",
        _ => b"unknown error\0",
    };
    s.as_ptr() as *const c_char
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_through_the_c_abi() {
        unsafe {
            let msg = bbc_message_random(128, 9, 64, 32, 16);
            assert!(!msg.is_null());
            let weights = [1u64 << 14, 2 << 14, 1 << 14];
            let dist = bbc_dist_new(weights.as_ptr(), weights.len(), 16);
            assert!(!dist.is_null());

            let xs = [0u64, 1, 2, 1, 1, 0];
            for &x in &xs {
                assert_eq!(bbc_push(msg, dist, x), BBC_OK);
            }
            assert_eq!(bbc_push_uniform(msg, 0b1011, 4), BBC_OK);

            // serialize, reload, and drain in reverse
            let mut buf: *mut u8 = ptr::null_mut();
            let mut len = 0usize;
            assert_eq!(bbc_message_serialize(msg, &mut buf, &mut len), BBC_OK);
            let mut copy: *mut BbcMessage = ptr::null_mut();
            assert_eq!(bbc_message_deserialize(buf, len, 16, &mut copy), BBC_OK);
            bbc_buffer_free(buf, len);

            for m in [msg, copy] {
                let mut u = 0u64;
                assert_eq!(bbc_pop_uniform(m, 4, &mut u), BBC_OK);
                assert_eq!(u, 0b1011);
                for &x in xs.iter().rev() {
                    let mut got = 0u64;
                    assert_eq!(bbc_pop(m, dist, &mut got), BBC_OK);
                    assert_eq!(got, x);
                }
            }
            bbc_message_free(msg);
            bbc_message_free(copy);
            bbc_dist_free(dist);
        }
    }

    #[test]
    fn error_paths() {
        unsafe {
            assert!(bbc_message_new(16, 32, 8).is_null()); // r_t > r_s
            let weights = [1u64, 2, 3]; // doesn't sum to a power of two
            assert!(bbc_dist_new(weights.as_ptr(), 3, 16).is_null());

            let msg = bbc_message_new(64, 32, 16);
            let w = [1u64 << 15, 1 << 15];
            let dist = bbc_dist_new(w.as_ptr(), 2, 16);
            let mut out = 0u64;
            // fresh message holds nothing to pop
            assert_eq!(bbc_pop(msg, dist, &mut out), BBC_ERR_UNDERFLOW);
            assert_eq!(bbc_pop(ptr::null_mut(), dist, &mut out), BBC_ERR_ARG);
            let junk = [0u8; 3];
            let mut m2: *mut BbcMessage = ptr::null_mut();
            assert_eq!(
                bbc_message_deserialize(junk.as_ptr(), 3, 16, &mut m2),
                BBC_ERR_FORMAT
            );
            bbc_message_free(msg);
            bbc_dist_free(dist);
        }
    }
}
