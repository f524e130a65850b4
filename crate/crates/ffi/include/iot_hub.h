#ifndef IOT_HUB_H
#define IOT_HUB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum IotHubStatus {
  IOT_HUB_STATUS_OK = 0,
  IOT_HUB_STATUS_NULL_ARGUMENT = 1,
  IOT_HUB_STATUS_INVALID_UTF8 = 2,
  IOT_HUB_STATUS_INVALID_CONFIG = 3,
  IOT_HUB_STATUS_INVALID_QUERY = 4,
  IOT_HUB_STATUS_UNKNOWN_USER = 5,
  IOT_HUB_STATUS_UNKNOWN_CAPABILITY = 6,
  IOT_HUB_STATUS_UNSATISFIABLE = 7,
  IOT_HUB_STATUS_UNRESOLVABLE = 8,
  IOT_HUB_STATUS_DUPLICATE_REQUEST = 9,
  IOT_HUB_STATUS_SCENARIO_ABORT = 10,
  IOT_HUB_STATUS_INTERNAL = 11,
  IOT_HUB_STATUS_PANIC = 12,
} IotHubStatus;

// Opaque hub handle.
typedef struct IotHub IotHub;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until
// the next failing call on the same thread; do not free.
const char *iot_hub_last_error(void);

// Boots a hub from a scenario JSON document, or the bundled scenario when
// `config_json` is null.
//
// # Safety
// `config_json` is null or a NUL-terminated string; `out` is writable.
enum IotHubStatus iot_hub_boot(const char *config_json, struct IotHub **out);

// Boots a quiet hub: no scripted requests, no faults.
//
// # Safety
// `out` is writable.
enum IotHubStatus iot_hub_boot_quiet(uint64_t seed, uint64_t duration_ticks, struct IotHub **out);

// Releases a hub. Null is ignored.
//
// # Safety
// `hub` is null or a handle from `iot_hub_boot` not yet freed.
void iot_hub_free(struct IotHub *hub);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` is null or a string from this library not yet freed.
void iot_hub_string_free(char *s);

// Simulates until `tick` ticks have run.
//
// # Safety
// `hub` is a live handle.
enum IotHubStatus iot_hub_run_until(const struct IotHub *hub, uint64_t tick);

// Ticks simulated so far.
//
// # Safety
// `hub` is a live handle.
enum IotHubStatus iot_hub_ticks(const struct IotHub *hub, uint64_t *out);

// The scenario report as JSON.
//
// # Safety
// `hub` is a live handle; `out` is writable.
enum IotHubStatus iot_hub_report_json(const struct IotHub *hub, char **out);

// Submits a service request and writes its outcome as JSON. `params_json`
// may be null or a JSON object of request parameters.
//
// # Safety
// `hub` is a live handle; the strings are NUL-terminated (or null where
// allowed); `out` is writable.
enum IotHubStatus iot_hub_submit(const struct IotHub *hub,
                                 const char *user,
                                 const char *capability,
                                 const char *params_json,
                                 bool force_mashup,
                                 char **out);

// Runs a query document against the central store, or against a domain's
// store when `domain` is non-null, and writes the outcome as JSON.
//
// # Safety
// `hub` is a live handle; the strings are NUL-terminated (`domain` may be
// null); `out` is writable.
enum IotHubStatus iot_hub_query(const struct IotHub *hub,
                                const char *query_json,
                                const char *domain,
                                char **out);

// Routes one call through the HTTP gateway without a socket; writes the
// status code and JSON body.
//
// # Safety
// `hub` is a live handle; `method` and `url` are NUL-terminated, `body`
// may be null; `status` and `out` are writable.
enum IotHubStatus iot_hub_http(const struct IotHub *hub,
                               const char *method,
                               const char *url,
                               const char *body,
                               uint16_t *status,
                               char **out);

// Library version, static; do not free.
const char *iot_hub_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* IOT_HUB_H */
