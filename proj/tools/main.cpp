#include "nrsc/cli.hpp"

int main(int argc, char** argv) {
    return nrsc::cli::run(argc, argv);
}
