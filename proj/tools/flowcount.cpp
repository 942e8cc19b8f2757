#include "flowcount/app.hpp"

int main(int argc, char** argv) { return flowcount::app::run(argc, argv); }
