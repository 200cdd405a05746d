#include "cli_app.hpp"

int main(int argc, char** argv) { return iarscli::cli_main(argc, argv); }
