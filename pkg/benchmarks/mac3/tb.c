#include <stdio.h>
#include <stdint.h>

int16_t mac3(int16_t x, int16_t w, int32_t acc_in);

static const int16_t XS[16] = {100, -40, 250, 17, -300, 5, 60, -9, 3000, 8000, -12000, 20000, 21000, -5000, 7000, 15000};
static const int16_t WS[16] = {23, 51, -7, 90, 13, -66, 31, 77, 900, 1200, 1500, -800, 2000, 100, 3000, 2500};

int main(void) {
    for (int c = 0; c < 2; c++) {
        int32_t acc = 0;
        for (int k = 0; k < 8; k++) {
            int i = c * 8 + k;
            int16_t y = mac3(XS[i], WS[i], acc);
            printf("case %d vec %d y=%d\n", c + 1, i, y);
            acc = y;
        }
    }
    return 0;
}
