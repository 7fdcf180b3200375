#include <math.h>
#include <stdio.h>
#include "corrtest.h"

static unsigned long long state = 12345;

static double uniform(void) {
    state = state * 6364136223846793005ULL + 1442695040888963407ULL;
    return ((state >> 11) + 0.5) / 9007199254740992.0;
}

static double normal(void) {
    return sqrt(-2.0 * log(uniform())) * cos(6.283185307179586 * uniform());
}

int main(void) {
    enum { N = 200, D = 3 };
    double x[N * D];
    for (int i = 0; i < N * D; i++) x[i] = normal();

    CtDataset *ds = NULL;
    CtHypothesis *h = NULL;
    if (ct_dataset_new(&ds) != CT_STATUS_OK) return 1;
    if (ct_dataset_add_group(ds, x, N, D) != CT_STATUS_OK) return 2;
    if (ct_hypothesis_identity(D, &h) != CT_STATUS_OK) return 3;

    CtOptions opts = ct_options_default();
    opts.mc_reps = 2000;
    opts.seed = 7;
    CtTestResult res;
    if (ct_test(ds, h, "ats-mc", &opts, &res) != CT_STATUS_OK) return 4;
    if (!(res.p_value > 0.0 && res.p_value <= 1.0) || res.reps != 2000) return 5;

    if (ct_test(ds, h, "nope", &opts, &res) != CT_STATUS_INVALID_ARGUMENT) return 6;
    if (ct_last_error_message() == NULL) return 7;

    printf("statistic=%.6f p=%.4f version=%s\n", res.statistic, res.p_value, ct_version());
    ct_hypothesis_free(h);
    ct_dataset_free(ds);
    return 0;
}
