#include <iostream>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "cli.hpp"

int main(int argc, char** argv) {
#ifdef __GLIBC__
    // Training allocates and frees multi-megabyte activation buffers every
    // step. Keeping them in the heap instead of fresh mmaps avoids page-fault
    // storms that cost about a quarter of the step time.
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    return eclab::cli::run(argc, argv, std::cout, std::cerr);
}
