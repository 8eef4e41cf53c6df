#include "ckdrift/cli.hpp"

int main(int argc, char** argv) {
    return ckdrift::cli::run(argc, argv);
}
