#include "cyclemodel.h"
#include <stdio.h>
#include <string.h>

int main(void) {
    printf("version: %s\n", cm_version());

    CmFitted *fitted = NULL;
    if (cm_fitted_new(180.0, 6.0, 2.0, 20.0, 100, 500, 300, 7, &fitted) != CM_STATUS_OK) {
        return 1;
    }
    CmPredictor *pred = NULL;
    if (cm_predictor_new(fitted, CM_MODE_ALLOW_SKIPS, 0, 0, &pred) != CM_STATUS_OK) {
        return 2;
    }
    uint32_t cycles[10] = {30, 29, 31, 30, 28, 30, 31, 29, 30, 32};
    double expected = 0.0;
    uint32_t map = 0;
    if (cm_predict_expected(pred, cycles, 10, 0, &expected, &map) != CM_STATUS_OK) {
        char buf[256];
        cm_last_error(buf, sizeof buf);
        fprintf(stderr, "predict failed: %s\n", buf);
        return 3;
    }
    printf("expected=%.3f map=%u\n", expected, map);
    if (expected < 28.0 || expected > 40.0) return 4;

    double skip_probs[3];
    size_t len = 0;
    if (cm_skip_posterior(pred, cycles, 10, 40, skip_probs, 3, &len) != CM_STATUS_OK) return 5;
    printf("p(s*=0|40)=%.3f p(s*=1|40)=%.3f (support %zu)\n", skip_probs[0], skip_probs[1], len);

    /* error path: invalid pi */
    double pmf[4];
    if (cm_skip_pmf(1.5, 3, pmf) != CM_STATUS_INVALID_ARGUMENT) return 6;
    char buf[256];
    cm_last_error(buf, sizeof buf);
    if (strlen(buf) == 0) return 7;

    cm_predictor_free(pred);
    cm_fitted_free(fitted);
    printf("C ABI check OK\n");
    return 0;
}
