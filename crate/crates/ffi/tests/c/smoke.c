#include <stdio.h>
#include <string.h>

#include "vlodtta.h"

int main(void) {
    double a[4] = {0, 0, 10, 10};
    double b[4] = {5, 0, 15, 10};
    double overlap = 0;
    if (vlodtta_iou(a, b, &overlap) != VLODTTA_STATUS_OK) return 1;
    if (overlap < 0.3333 || overlap > 0.3334) return 2;

    size_t count = 0;
    if (vlodtta_adapter_param_count(32, 16, &count) != VLODTTA_STATUS_OK || count != 162) return 3;

    VlodttaEngine *engine = NULL;
    if (vlodtta_engine_new("{\"lr\": 0.01}", 32, &engine) != VLODTTA_STATUS_OK) return 4;
    if (vlodtta_engine_is_pristine(engine) != 1) return 5;

    char *out = NULL;
    VlodttaStatus s = vlodtta_engine_run(engine, "{", "vlodtta", &out);
    if (s != VLODTTA_STATUS_INVALID_JSON || out != NULL) return 6;
    if (strlen(vlodtta_last_error()) == 0) return 7;

    vlodtta_engine_free(engine);
    vlodtta_string_free(NULL);
    printf("%s\n", vlodtta_version());
    return 0;
}
