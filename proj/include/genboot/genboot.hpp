#pragma once

#include "genboot/analyze.hpp"
#include "genboot/bootstrap.hpp"
#include "genboot/dataset.hpp"
#include "genboot/error.hpp"
#include "genboot/model.hpp"
#include "genboot/parallel.hpp"
#include "genboot/rng.hpp"
#include "genboot/sim.hpp"
#include "genboot/version.hpp"
#include "genboot/weights.hpp"
