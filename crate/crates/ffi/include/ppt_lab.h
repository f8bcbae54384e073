#ifndef PPT_LAB_H
#define PPT_LAB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PptStatus {
  PPT_STATUS_OK = 0,
  PPT_STATUS_NULL_ARGUMENT = 1,
  PPT_STATUS_INVALID_ARGUMENT = 2,
  PPT_STATUS_IO = 3,
  PPT_STATUS_FORMAT = 4,
  PPT_STATUS_NUMERIC = 5,
  PPT_STATUS_BUFFER_TOO_SMALL = 6,
  PPT_STATUS_PANIC = 7,
} PptStatus;

// Offline pretraining dataset.
typedef struct PptDataset PptDataset;

// Gaussian bandit with per-arm means and shared variance.
typedef struct PptEnv PptEnv;

// Transformer checkpoint (policy or reward predictor).
typedef struct PptModel PptModel;

// One online episode.
typedef struct PptRollout PptRollout;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into this library from the same thread.
const char *ppt_last_error_message(void);

// Generates a dataset from the `"ideal"` or `"tricky"` preset.
//
// # Safety
// `preset` must be a NUL-terminated string and `out` a writable pointer.
enum PptStatus ppt_dataset_generate(const char *preset,
                                    size_t num_envs,
                                    uint64_t seed,
                                    struct PptDataset **out);

// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum PptStatus ppt_dataset_load(const char *path, struct PptDataset **out);

// # Safety
// `dataset` must be a live handle and `path` a NUL-terminated string.
enum PptStatus ppt_dataset_save(const struct PptDataset *dataset, const char *path);

// Number of episodes; 0 for a null handle.
//
// # Safety
// `dataset` must be null or a live handle.
size_t ppt_dataset_len(const struct PptDataset *dataset);

// # Safety
// `dataset` must be null or a live handle.
size_t ppt_dataset_num_arms(const struct PptDataset *dataset);

// # Safety
// `dataset` must be null or a live handle.
size_t ppt_dataset_horizon(const struct PptDataset *dataset);

// Copies one episode. `actions` and `rewards` must hold `horizon` values,
// `true_means` must hold `num_arms` values.
//
// # Safety
// Buffers must be writable for the capacities given.
enum PptStatus ppt_dataset_episode(const struct PptDataset *dataset,
                                   size_t index,
                                   uint32_t *actions,
                                   double *rewards,
                                   size_t capacity,
                                   double *true_means,
                                   size_t num_arms,
                                   uint32_t *optimal_arm);

// # Safety
// `dataset` must be null or a handle not yet freed.
void ppt_dataset_free(struct PptDataset *dataset);

// # Safety
// `means` must hold `num_arms` values and `out` be writable.
enum PptStatus ppt_env_new(const double *means,
                           size_t num_arms,
                           double sigma2,
                           size_t horizon,
                           struct PptEnv **out);

// # Safety
// `env` must be null or a handle not yet freed.
void ppt_env_free(struct PptEnv *env);

// # Safety
// `path` must be a NUL-terminated string and `out` a writable pointer.
enum PptStatus ppt_model_load(const char *path, struct PptModel **out);

// # Safety
// `model` must be null or a live handle.
size_t ppt_model_num_arms(const struct PptModel *model);

// Longest rollout the model can run; 0 for null.
//
// # Safety
// `model` must be null or a live handle.
size_t ppt_model_max_horizon(const struct PptModel *model);

// # Safety
// `model` must be null or a handle not yet freed.
void ppt_model_free(struct PptModel *model);

// UCB with exploration weight `beta`. `seed` and `env_index` select the
// reward-noise stream, shared by every agent run on the same pair.
//
// # Safety
// `env` must be a live handle and `out` writable.
enum PptStatus ppt_rollout_ucb(const struct PptEnv *env,
                               double beta,
                               uint64_t seed,
                               uint64_t env_index,
                               struct PptRollout **out);

// # Safety
// `env` must be a live handle and `out` writable.
enum PptStatus ppt_rollout_random(const struct PptEnv *env,
                                  uint64_t seed,
                                  uint64_t env_index,
                                  struct PptRollout **out);

// Runs a pretrained policy online. `predictor` may be null for policies
// that take no reward estimates. `greedy` picks the most likely action
// instead of sampling.
//
// # Safety
// Handles must be live (or null for `predictor`) and `out` writable.
enum PptStatus ppt_rollout_deploy(const struct PptModel *policy,
                                  const struct PptModel *predictor,
                                  const struct PptEnv *env,
                                  uint64_t seed,
                                  uint64_t env_index,
                                  bool greedy,
                                  struct PptRollout **out);

// # Safety
// `rollout` must be null or a live handle.
size_t ppt_rollout_horizon(const struct PptRollout *rollout);

// # Safety
// `out` must be writable for `capacity` values.
enum PptStatus ppt_rollout_actions(const struct PptRollout *rollout,
                                   uint32_t *out,
                                   size_t capacity);

// # Safety
// `out` must be writable for `capacity` values.
enum PptStatus ppt_rollout_rewards(const struct PptRollout *rollout, double *out, size_t capacity);

// Expected per-step gap to the best arm under the recorded action
// distributions.
//
// # Safety
// `out` must be writable for `capacity` values.
enum PptStatus ppt_rollout_suboptimality(const struct PptRollout *rollout,
                                         double *out,
                                         size_t capacity);

// # Safety
// `rollout` must be null or a handle not yet freed.
void ppt_rollout_free(struct PptRollout *rollout);

// Average suboptimality at every step across `count` equal-length rollouts.
//
// # Safety
// `rollouts` must point to `count` live handles; `out` must be writable for
// `capacity` values.
enum PptStatus ppt_avg_suboptimality(const struct PptRollout *const *rollouts,
                                     size_t count,
                                     double *out,
                                     size_t capacity);

// Average cumulative regret at every step.
//
// # Safety
// As for [`ppt_avg_suboptimality`].
enum PptStatus ppt_avg_regret(const struct PptRollout *const *rollouts,
                              size_t count,
                              double *out,
                              size_t capacity);

// Squared distance between the deployed predictor's estimates and the true
// means at every step, averaged over rollouts.
//
// # Safety
// As for [`ppt_avg_suboptimality`].
enum PptStatus ppt_online_prediction_loss(const struct PptRollout *const *rollouts,
                                          size_t count,
                                          double *out,
                                          size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PPT_LAB_H */
