#pragma once
// Everything at once.
#include "gridshift/error.hpp"
#include "gridshift/netmodel.hpp"
#include "gridshift/io.hpp"
#include "gridshift/powerflow.hpp"
#include "gridshift/qp.hpp"
#include "gridshift/opf.hpp"
#include "gridshift/sensitivity.hpp"
#include "gridshift/congestion.hpp"
