#include <pybind11/pybind11.h>
PYBIND11_MODULE(_klg, m) { m.doc() = "placeholder"; }
