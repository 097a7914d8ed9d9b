#include <stdint.h>

int16_t quant_in(int16_t x) {
    return (int16_t)((x * 3) >> 1);
}

int32_t mac_q4(int16_t a, int16_t b, int32_t acc) {
    int32_t p = (int32_t)a * (int32_t)b;
    return acc + ((p + 8) >> 4);
}

int16_t clip_out(int32_t v) {
    if (v > 32767) return 32767;
    if (v < -32768) return -32768;
    return (int16_t)v;
}

int16_t mac3(int16_t x, int16_t w, int32_t acc_in) {
    int16_t q = quant_in(x);
    int32_t m = mac_q4(q, w, acc_in);
    return clip_out(m);
}
