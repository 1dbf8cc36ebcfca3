#include "ratrec/cli.hpp"

int main(int argc, char** argv) { return ratrec::cli::dispatch(argc, argv); }
