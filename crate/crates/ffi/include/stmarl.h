#ifndef STMARL_H
#define STMARL_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by fallible functions.
 */
typedef enum StmarlStatus {
  STMARL_STATUS_OK = 0,
  STMARL_STATUS_NULL_POINTER = 1,
  STMARL_STATUS_INVALID_UTF8 = 2,
  STMARL_STATUS_PARSE_ERROR = 3,
  STMARL_STATUS_INVALID_ARGUMENT = 4,
  STMARL_STATUS_SIMULATION_ERROR = 5,
  STMARL_STATUS_IO_ERROR = 6,
} StmarlStatus;

/**
 * Action protocol for `stmarl_sim_decision_step`.
 */
typedef enum StmarlActionMode {
  STMARL_ACTION_MODE_CHOOSE = 0,
  STMARL_ACTION_MODE_SWITCH = 1,
} StmarlActionMode;

/**
 * Controller families a checkpoint can be loaded for.
 */
typedef enum StmarlController {
  STMARL_CONTROLLER_STMARL = 0,
  STMARL_CONTROLLER_STMARL_ST = 1,
  STMARL_CONTROLLER_STMARL_T = 2,
  STMARL_CONTROLLER_STMARL_S = 3,
} StmarlController;

typedef struct StmarlGraph StmarlGraph;

typedef struct StmarlPolicy StmarlPolicy;

typedef struct StmarlSim StmarlSim;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message on this thread into `buf`
 * (truncated, always NUL-terminated). Returns the full message length.
 *
 * # Safety
 * `buf` must point to `len` writable bytes (or be null to query the
 * length only).
 */
uintptr_t stmarl_last_error(char *buf, uintptr_t len);

/**
 * Builds a grid topology (see the grid generator in the core crate).
 * Returns null on invalid arguments.
 */
struct StmarlGraph *stmarl_graph_grid(uintptr_t rows,
                                      uintptr_t cols,
                                      bool bidirectional,
                                      uintptr_t lanes,
                                      double length_m,
                                      double speed_mps);

/**
 * Parses a topology JSON document into a validated graph.
 *
 * # Safety
 * `json` must be a NUL-terminated string.
 */
struct StmarlGraph *stmarl_graph_from_json(const char *json);

/**
 * # Safety
 * `g` must be a live graph handle.
 */
uintptr_t stmarl_graph_node_count(const struct StmarlGraph *g);

/**
 * # Safety
 * `g` must be a live graph handle.
 */
uintptr_t stmarl_graph_edge_count(const struct StmarlGraph *g);

/**
 * Number of signalized intersections; the joint-action length.
 *
 * # Safety
 * `g` must be a live graph handle.
 */
uintptr_t stmarl_graph_control_count(const struct StmarlGraph *g);

/**
 * # Safety
 * `g` must come from a `stmarl_graph_*` constructor; it is freed.
 */
void stmarl_graph_free(struct StmarlGraph *g);

/**
 * Creates a seeded simulator over a copy of `graph` with a flow file
 * body (JSON); pass null for no demand.
 *
 * # Safety
 * `graph` must be live; `flow_json` null or NUL-terminated.
 */
struct StmarlSim *stmarl_sim_new(const struct StmarlGraph *graph,
                                 const char *flow_json,
                                 uint64_t seed);

/**
 * Applies a joint action (one entry per control node, ascending node
 * id) and advances one 10-second decision step.
 *
 * # Safety
 * `sim` live; `actions` points to `len` entries.
 */
enum StmarlStatus stmarl_sim_decision_step(struct StmarlSim *sim,
                                           const uintptr_t *actions,
                                           uintptr_t len,
                                           enum StmarlActionMode mode);

/**
 * # Safety
 * `sim` must be a live simulator handle.
 */
uint64_t stmarl_sim_clock(const struct StmarlSim *sim);

/**
 * # Safety
 * `sim` must be a live simulator handle.
 */
uint64_t stmarl_sim_spawned(const struct StmarlSim *sim);

/**
 * # Safety
 * `sim` must be a live simulator handle.
 */
uint64_t stmarl_sim_completed(const struct StmarlSim *sim);

/**
 * Mean travel time over all vehicles (in-network vehicles censored at
 * the current clock).
 *
 * # Safety
 * `sim` live; `out` points to a double.
 */
enum StmarlStatus stmarl_sim_avg_travel_time(const struct StmarlSim *sim, double *out);

/**
 * Writes `q, n, speed` of one lane into `out[0..3]`.
 *
 * # Safety
 * `sim` live; `out` points to three doubles.
 */
enum StmarlStatus stmarl_sim_lane_stats(const struct StmarlSim *sim,
                                        uintptr_t edge,
                                        uintptr_t lane,
                                        double *out);

/**
 * Per-intersection rewards (negative incoming queue totals), one entry
 * per control node.
 *
 * # Safety
 * `sim` live; `out` points to `len` doubles.
 */
enum StmarlStatus stmarl_sim_reward(const struct StmarlSim *sim, double *out, uintptr_t len);

/**
 * Greedy max-pressure action for control slot `slot` (choose mode);
 * negative on error.
 *
 * # Safety
 * `sim` must be a live simulator handle.
 */
int stmarl_sim_max_pressure_action(const struct StmarlSim *sim, uintptr_t slot);

/**
 * Fixed-time action for control slot `slot` under the uniform 30 s
 * plan; negative on error.
 *
 * # Safety
 * `sim` must be a live simulator handle.
 */
int stmarl_sim_fixed_time_action(const struct StmarlSim *sim,
                                 uintptr_t slot,
                                 enum StmarlActionMode mode);

/**
 * # Safety
 * `sim` must come from `stmarl_sim_new`; it is freed.
 */
void stmarl_sim_free(struct StmarlSim *sim);

/**
 * Loads a trained checkpoint for the given controller family. The
 * returned policy carries its own recurrent state, starting from zero.
 *
 * # Safety
 * `graph` live; `checkpoint_path` NUL-terminated.
 */
struct StmarlPolicy *stmarl_policy_load(const struct StmarlGraph *graph,
                                        const char *checkpoint_path,
                                        enum StmarlController controller,
                                        uintptr_t hidden,
                                        uintptr_t reasoning_steps,
                                        enum StmarlActionMode mode);

/**
 * Greedy joint action for the simulator's current observation; the
 * policy's recurrent state advances one step. `actions_out` needs one
 * entry per control node.
 *
 * # Safety
 * All handles live; `actions_out` points to `len` entries.
 */
enum StmarlStatus stmarl_policy_act(struct StmarlPolicy *policy,
                                    const struct StmarlSim *sim,
                                    uintptr_t *actions_out,
                                    uintptr_t len);

/**
 * Resets the policy's recurrent state to zero (start of an episode).
 *
 * # Safety
 * `policy` and `graph` must be live handles.
 */
enum StmarlStatus stmarl_policy_reset(struct StmarlPolicy *policy, const struct StmarlGraph *graph);

/**
 * # Safety
 * `policy` must come from `stmarl_policy_load`; it is freed.
 */
void stmarl_policy_free(struct StmarlPolicy *policy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STMARL_H */
