#include "homog/app.hpp"

int main(int argc, char** argv) { return homog::app::run(argc, argv); }
