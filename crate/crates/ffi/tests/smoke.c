#include <math.h>
#include <stdio.h>
#include "greybox.h"

#define CHECK(cond)                                                   \
    do {                                                              \
        if (!(cond)) {                                                \
            const char *m = gb_last_error_message();                  \
            fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond,    \
                    m ? m : "no message");                            \
            return 1;                                                 \
        }                                                             \
    } while (0)

int main(void) {
    GbSignature s = {0.5, 2.0, 1.5, 10.0, 0.2, 0.1, 0.0};
    double times[100], values[100];
    for (int i = 0; i < 100; i++) {
        times[i] = 0.1 * i;
        CHECK(gb_eval(&s, times[i], &values[i]) == GB_STATUS_OK);
    }

    GbSignature fit;
    double ssr;
    CHECK(gb_fit_trace(times, values, 100, &fit, &ssr) == GB_STATUS_OK);
    CHECK(fabs(fit.omega - 1.5) < 1e-4);

    GbControlParams cp = {1.0, 1.0, 1.0, 0.5, 0.0, 1.0};
    GbOdeParams ode;
    CHECK(gb_ode_from_control_output(&cp, &ode) == GB_STATUS_OK);
    CHECK(ode.gamma == 2.0 && ode.k == 2.0);

    double mu[7] = {0.5, 2.0, 1.5, 10.0, 0.2, 0.1, 0.0};
    double sd[7] = {0.02, 0.1, 0.05, 0.3, 0.05, 0.005, 1e-4};
    GbNormalModel *nm = NULL;
    CHECK(gb_normal_model_new(0.05, mu, sd, 0, "T", "S", "P", &nm) == GB_STATUS_OK);
    double grad[7];
    CHECK(gb_score_gradient(nm, &s, times, values, 100, grad) == GB_STATUS_OK);
    for (int i = 0; i < 7; i++) CHECK(grad[i] == 0.0);
    gb_normal_model_free(nm);

    CHECK(gb_eval(NULL, 0.0, &ssr) == GB_STATUS_NULL_POINTER);
    CHECK(gb_last_error_message() != NULL);
    printf("ok\n");
    return 0;
}
