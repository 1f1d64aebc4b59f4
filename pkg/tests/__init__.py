# DO NOT DETELE THIS FILE
# This file exists so that test coverage runs as expected on Github Actions + tox
