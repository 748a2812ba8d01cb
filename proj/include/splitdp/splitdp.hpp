#pragma once

#include "attack.hpp"
#include "calib.hpp"
#include "core.hpp"
#include "experiment.hpp"
#include "fdp.hpp"
#include "io.hpp"
#include "lm.hpp"
#include "mech.hpp"
#include "net.hpp"
#include "pipeline.hpp"
#include "proj.hpp"
#include "wire.hpp"
