#include <stdio.h>
#include <string.h>
#include "avscan.h"

/* Usage: smoke <hex>. Prints "<verdict> <findings> <selector>" or the error. */
int main(int argc, char **argv) {
  if (argc < 2) return 64;
  AvsOptions *opts = avs_options_new();
  avs_options_set_timeout_ms(opts, 60000);
  avs_options_set_mode(opts, AVS_MODE_WHITELIST);

  AvsReport *report = NULL;
  if (avs_analyze_hex(argv[1], opts, &report) != AVS_STATUS_OK) {
    printf("error %s\n", avs_last_error());
    avs_options_free(opts);
    return 0;
  }
  AvsVerdict verdict;
  size_t count = 0;
  avs_report_verdict(report, &verdict);
  avs_report_finding_count(report, &count);
  AvsFinding f;
  memset(&f, 0, sizeof f);
  if (count > 0) avs_report_finding(report, 0, &f);
  printf("%d %zu %08x\n", (int)verdict, count, f.selector);

  char *json = NULL;
  avs_report_json(report, &json);
  int ok = json != NULL && strstr(json, "\"schema_version\"") != NULL;
  avs_string_free(json);
  avs_report_free(report);
  avs_options_free(opts);
  return ok ? 0 : 1;
}
