#pragma once

#include "pamm/basis.hpp"
#include "pamm/csv.hpp"
#include "pamm/design.hpp"
#include "pamm/error.hpp"
#include "pamm/fit.hpp"
#include "pamm/metrics.hpp"
#include "pamm/model_io.hpp"
#include "pamm/model_spec.hpp"
#include "pamm/ped.hpp"
#include "pamm/pirls.hpp"
#include "pamm/product_form.hpp"
#include "pamm/reml.hpp"
#include "pamm/sim.hpp"
