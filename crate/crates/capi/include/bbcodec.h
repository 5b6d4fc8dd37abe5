/* C interface for the bbcodec entropy coder.
 *
 * All handles are opaque and must be released with the matching free
 * function. Functions returning int use the BBC_* error codes; functions
 * returning pointers yield NULL on invalid input.
 */
#ifndef BBCODEC_H
#define BBCODEC_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define BBC_OK 0
#define BBC_ERR_ARG 1       /* invalid argument */
#define BBC_ERR_FORMAT 2    /* malformed container or stream */
#define BBC_ERR_MODEL 3     /* model mismatch */
#define BBC_ERR_UNDERFLOW 4 /* not enough information in the message */
#define BBC_ERR_PANIC 5     /* internal error */

typedef struct BbcMessage BbcMessage;
typedef struct BbcDist BbcDist;

/* Message lifecycle. Precisions: head width r_s, tail word width r_t,
 * distribution precision r, with 0 < r <= r_s - r_t - 1 and
 * r_t <= r_s <= 2 r_t. */
BbcMessage *bbc_message_new(uint32_t r_s, uint32_t r_t, uint32_t r);
BbcMessage *bbc_message_random(uint64_t bits, uint64_t seed, uint32_t r_s,
                               uint32_t r_t, uint32_t r);
void bbc_message_free(BbcMessage *msg);
double bbc_message_effective_length(const BbcMessage *msg);

/* Quantized distribution: len positive weights summing to 2^r. */
BbcDist *bbc_dist_new(const uint64_t *weights, size_t len, uint32_t r);
void bbc_dist_free(BbcDist *dist);

/* Stack-like coding: pop is the exact inverse of push. */
int bbc_push(BbcMessage *msg, const BbcDist *dist, uint64_t symbol);
int bbc_pop(BbcMessage *msg, const BbcDist *dist, uint64_t *symbol);
int bbc_push_uniform(BbcMessage *msg, uint64_t value, uint32_t nbits);
int bbc_pop_uniform(BbcMessage *msg, uint32_t nbits, uint64_t *value);

/* Byte container round trip. Serialized buffers are owned by the library
 * and must be released with bbc_buffer_free. */
int bbc_message_serialize(const BbcMessage *msg, uint8_t **out,
                          size_t *out_len);
int bbc_message_deserialize(const uint8_t *bytes, size_t len, uint32_t r,
                            BbcMessage **out);
void bbc_buffer_free(uint8_t *buf, size_t len);

/* Static description of an error code. */
const char *bbc_strerror(int code);

#ifdef __cplusplus
}
#endif

#endif /* BBCODEC_H */
